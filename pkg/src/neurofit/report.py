"""Across-fit parameter statistics and their table renderings."""

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .models import FN_TABLE_ROWS, HH_TABLE_ROWS

COLUMNS = ("mean", "sigma", "sigma_over_mu", "min", "max")


@dataclass(frozen=True)
class ParamStats:
    name: str
    mean: float
    sigma: float
    sigma_over_mu: float
    min: float
    max: float
    n: int

    def row(self):
        return [self.mean, self.sigma, self.sigma_over_mu, self.min, self.max]


def param_stats(name, values):
    """Mean, population standard deviation, |sigma/mean|, min and max."""
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        raise ValueError(f"no values for {name}")
    mean = float(np.mean(x))
    # identical values: np.std can leave roundoff from the mean
    sigma = 0.0 if x.min() == x.max() else float(np.std(x))
    if sigma == 0.0:
        cv = 0.0
    elif mean == 0.0:
        cv = float("inf")
    else:
        cv = abs(sigma / mean)
    return ParamStats(name, mean, sigma, cv, float(np.min(x)), float(np.max(x)), int(x.size))


def table_rows(model):
    return FN_TABLE_ROWS if model == "fn" else HH_TABLE_ROWS


def aggregate(model, fitted):
    """``fitted`` is a list of ``{field: value}``; rows follow the reference table order."""
    stats = []
    for label, fld in table_rows(model).items():
        values = [f[fld] for f in fitted if fld in f]
        if values:
            stats.append(param_stats(label, values))
    return stats


def stats_from_result_files(paths):
    """Re-read per-fit ``result.json`` files and aggregate the physical parameters."""
    model, fitted = None, []
    for path in paths:
        with open(path) as fh:
            doc = json.load(fh)
        if doc.get("status") != "ok":
            continue
        model = doc["model"]
        fitted.append({k: v["physical_value"] for k, v in doc["lambda"]["fields"].items()})
    if model is None:
        return []
    return aggregate(model, fitted)


def _sig4(x):
    return f"{x:.4g}"


def format_table(stats):
    """Aligned text table, 4 significant digits."""
    header = ["", "mean", "sigma", "sigma/mu", "min", "max"]
    body = [[s.name] + [_sig4(v) for v in s.row()] for s in stats]
    widths = [max(len(r[k]) for r in [header] + body) for k in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in [header] + body]
    return "\n".join(lines) + "\n"


def stats_csv(stats):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("param",) + COLUMNS + ("n",))
    for s in stats:
        writer.writerow([s.name] + [repr(float(v)) for v in s.row()] + [s.n])
    return buf.getvalue()


def read_stats_csv(path):
    out = {}
    with open(path) as fh:
        for row in csv.DictReader(fh):
            out[row["param"]] = {k: float(row[k]) for k in COLUMNS}
    return out


def write_stats(stats, outdir):
    outdir = Path(outdir)
    (outdir / "stats.csv").write_text(stats_csv(stats))
    (outdir / "stats.txt").write_text(format_table(stats))
