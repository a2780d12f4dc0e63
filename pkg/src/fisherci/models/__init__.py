from .base import Model
from .gaussmix import GaussMixModel, GaussMixSpec
from .spn import SpnModel, SpnSpec
from .ssm import SsmModel, SsmSpec

__all__ = ["Model", "GaussMixModel", "GaussMixSpec", "SpnModel", "SpnSpec", "SsmModel", "SsmSpec"]
