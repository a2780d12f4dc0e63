"""Report files: JSON report and manifest, CSV summaries and a text table.

Machine-readable files hold numbers in their shortest round-trip form, so
reading a report back yields exactly the arrays that were written.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__
from .config import config_from_dict, config_to_dict
from .montecarlo import ExperimentConfig, ExperimentReport

SUMMARY_HEADER = ("component", "mse_h", "mse_f", "ratio")
REPORT_FILE = "report.json"
MANIFEST_FILE = "manifest.json"
SUMMARY_FILE = "summary.csv"
RECORDS_FILE = "records.csv"
TABLE_FILE = "table.txt"

_ARRAY_FIELDS = {
    "theta_star", "v_n", "typical_hinv", "typical_finv", "mse_h", "mse_f",
    "ratio", "mse_h_se", "mse_f_se", "reliability",
}


@dataclass
class RunManifest:
    config: ExperimentConfig
    artifact_version: str = __version__
    started_at: str = ""
    finished_at: str = ""
    wall_time_seconds: float = 0.0
    worker_count: int = 1
    reliability: int = 0

    def to_dict(self) -> dict:
        return {
            "config": config_to_dict(self.config, self.reliability),
            "artifact_version": self.artifact_version,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "wall_time_seconds": self.wall_time_seconds,
            "worker_count": self.worker_count,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "RunManifest":
        config, reliability = config_from_dict(doc["config"])
        return cls(
            config=config,
            artifact_version=doc["artifact_version"],
            started_at=doc["started_at"],
            finished_at=doc["finished_at"],
            wall_time_seconds=doc["wall_time_seconds"],
            worker_count=doc["worker_count"],
            reliability=reliability,
        )


def _num(x) -> str:
    # repr of a Python float is the shortest string that round-trips
    return repr(float(x))


def _jsonable(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, tuple):
        return list(value)
    return value


def report_to_dict(report: ExperimentReport) -> dict:
    return {f.name: _jsonable(getattr(report, f.name)) for f in fields(report)}


def report_from_dict(doc: dict) -> ExperimentReport:
    kw = {}
    for f in fields(ExperimentReport):
        v = doc.get(f.name)
        if f.name in _ARRAY_FIELDS and v is not None:
            v = np.asarray(v, dtype=float)
        elif f.name in ("names", "zero_mse_f"):
            v = tuple(v)
        kw[f.name] = v
    return ExperimentReport(**kw)


def reports_equal(a: ExperimentReport, b: ExperimentReport) -> bool:
    for f in fields(ExperimentReport):
        x, y = getattr(a, f.name), getattr(b, f.name)
        if f.name in _ARRAY_FIELDS:
            if (x is None) != (y is None):
                return False
            if x is not None and not np.array_equal(np.asarray(x), np.asarray(y), equal_nan=True):
                return False
        elif x != y:
            return False
    return True


def summary_csv(report: ExperimentReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_HEADER)
    for j, name in enumerate(report.names):
        w.writerow([name, _num(report.mse_h[j]), _num(report.mse_f[j]), _num(report.ratio[j])])
    return buf.getvalue()


def records_header(names) -> list[str]:
    head = ["rep_index", "excluded", "exclusion_reason", "iterations", "grad_norm", "flags"]
    for prefix in ("theta_hat", "hinv_diag", "finv_diag"):
        head += [f"{prefix}_{n}" for n in names]
    return head


def records_csv(records, names) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(records_header(names))
    for r in sorted(records, key=lambda rec: rec.rep_index):
        row = [r.rep_index, int(r.excluded), r.exclusion_reason.value, r.iterations,
               _num(r.grad_norm), "|".join(r.flags)]
        for arr in (r.theta_hat, r.hinv_diag, r.finv_diag):
            row += [_num(v) for v in arr]
        w.writerow(row)
    return buf.getvalue()


def _sig(x, digits=4, keep_zeros=False) -> str:
    x = float(x)
    if not np.isfinite(x):
        return str(x)
    if keep_zeros:
        return f"{x:#.{digits}g}"
    return f"{x:.{digits}g}" if x != 0 else "0"


def _matrix_lines(label, m, width):
    m = np.atleast_2d(m)
    rows = ["  ".join(_sig(v).rjust(width) for v in row) for row in m]
    pad = " " * len(label)
    return [(label if i == 0 else pad) + row for i, row in enumerate(rows)]


def format_table(report: ExperimentReport) -> str:
    """Human-readable summary with four significant digits."""
    width = 11
    lines = [
        f"model: {report.model_id}   n = {report.n}   replications = {report.replications}"
        f"   seed = {report.master_seed}   alpha = {report.alpha}",
        "true parameter: [" + ", ".join(_sig(v) for v in report.theta_star) + "]",
        "components: " + ", ".join(report.names),
        "",
    ]
    lines += _matrix_lines("n cov(theta_hat)  ", report.v_n, width)
    lines.append("")
    lines += _matrix_lines(f"typical H^-1 (#{report.typical_hinv_index}) ".ljust(19), report.typical_hinv, width)
    lines.append("")
    lines += _matrix_lines(f"typical F^-1 (#{report.typical_finv_index}) ".ljust(19), report.typical_finv, width)
    lines.append("")
    name_w = max(9, max(len(n) for n in report.names))
    lines.append(f"{'component'.ljust(name_w)}  {'MSE_H':>11}  {'MSE_F':>11}  {'MSE_H/MSE_F':>11}")
    for j, name in enumerate(report.names):
        lines.append(
            f"{name.ljust(name_w)}  {_sig(report.mse_h[j]):>11}  {_sig(report.mse_f[j]):>11}"
            f"  {_sig(report.ratio[j], keep_zeros=True):>11}"
        )
    if report.reliability is not None:
        lines.append("")
        lines.append("V_n diagonal relative error: [" + ", ".join(_sig(v) for v in report.reliability) + "]")
    lines.append("")
    excl = ", ".join(f"{k}={v}" for k, v in report.exclusion_counts.items())
    lines.append(f"included {report.included_count}, excluded {report.excluded_count} ({excl})")
    return "\n".join(lines) + "\n"


def write_report(report: ExperimentReport, manifest: RunManifest, out_dir, records=()) -> list[Path]:
    """Write every output file into ``out_dir`` and return their paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    contents = {
        REPORT_FILE: json.dumps(report_to_dict(report), indent=2) + "\n",
        SUMMARY_FILE: summary_csv(report),
        RECORDS_FILE: records_csv(records, report.names),
        TABLE_FILE: format_table(report),
        MANIFEST_FILE: json.dumps(manifest.to_dict(), indent=2) + "\n",
    }
    paths = []
    for name, text in contents.items():
        path = out / name
        path.write_text(text, encoding="utf-8")
        paths.append(path)
    return paths


def read_report(out_dir) -> ExperimentReport:
    doc = json.loads((Path(out_dir) / REPORT_FILE).read_text(encoding="utf-8"))
    return report_from_dict(doc)


def read_manifest(out_dir) -> RunManifest:
    doc = json.loads((Path(out_dir) / MANIFEST_FILE).read_text(encoding="utf-8"))
    return RunManifest.from_dict(doc)


def read_records(out_dir) -> list[dict]:
    with open(Path(out_dir) / RECORDS_FILE, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
