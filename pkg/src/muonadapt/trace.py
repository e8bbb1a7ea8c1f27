"""Trace analytics over geometry logs and generic CSV emission."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .scheduler import GeometrySnapshot, read_geometry_log


@dataclass(frozen=True)
class TraceReport:
    pearson_r: float | None
    zero_variance: bool
    n_pairs: int
    per_type_kappa: dict[str, dict[int, float]]   # type -> step -> median kappa
    per_layer_kappa: dict[int, dict[int, float]]  # layer -> step -> median kappa
    shallow_deep_crossing: int | None

    def as_dict(self) -> dict:
        return {
            "pearson_r": self.pearson_r,
            "zero_variance": self.zero_variance,
            "n_pairs": self.n_pairs,
            "per_type_kappa": {
                k: {str(s): v for s, v in series.items()}
                for k, series in self.per_type_kappa.items()
            },
            "per_layer_kappa": {
                str(k): {str(s): v for s, v in series.items()}
                for k, series in self.per_layer_kappa.items()
            },
            "shallow_deep_crossing": self.shallow_deep_crossing,
        }


def pearson(xs, ys) -> float | None:
    """Pearson correlation; None when either side has zero variance."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if len(x) < 2:
        return None
    xc = x - x.mean()
    yc = y - y.mean()
    denom = np.sqrt(np.sum(xc * xc) * np.sum(yc * yc))
    if denom == 0.0:
        return None
    return float(np.sum(xc * yc) / denom)


def _median_series(rows: list[GeometrySnapshot], key) -> dict:
    grouped: dict = {}
    for row in rows:
        grouped.setdefault(key(row), {}).setdefault(row.step, []).append(row.kappa)
    return {
        group: {step: float(np.median(vals)) for step, vals in sorted(by_step.items())}
        for group, by_step in grouped.items()
    }


def trace_stats(rows_or_path) -> TraceReport:
    """Pearson r over (log10 kappa, eps_norm) pairs plus median-kappa series.

    The shallow group is the first three layers, the deep group the last
    three; the crossing is the first logged step at which their median-kappa
    ordering reverses relative to the first step (None when it never does).
    """
    rows = rows_or_path
    if isinstance(rows_or_path, (str, bytes)) or hasattr(rows_or_path, "__fspath__"):
        rows = read_geometry_log(rows_or_path)
    rows = list(rows)
    if not rows:
        raise ValueError("empty geometry log")
    steps = sorted({r.step for r in rows})
    types = sorted({r.op_type for r in rows})
    if len(steps) < 2 or len(types) < 2:
        raise ValueError("trace needs at least two steps and two operator types")

    log_kappa = [np.log10(r.kappa) for r in rows]
    eps = [r.eps_norm for r in rows]
    r_value = pearson(log_kappa, eps)

    per_type = _median_series(rows, key=lambda r: r.op_type)
    per_layer = _median_series(rows, key=lambda r: r.layer)

    layers = sorted({r.layer for r in rows})
    crossing = None
    if len(layers) >= 2:
        shallow = set(layers[:3])
        deep = set(layers[-3:])
        sign0 = None
        for step in steps:
            sh = [r.kappa for r in rows if r.step == step and r.layer in shallow]
            dp = [r.kappa for r in rows if r.step == step and r.layer in deep]
            if not sh or not dp:
                continue
            diff = float(np.median(sh) - np.median(dp))
            if diff == 0.0:
                continue
            sign = 1 if diff > 0 else -1
            if sign0 is None:
                sign0 = sign
            elif sign != sign0:
                crossing = step
                break
    return TraceReport(
        pearson_r=r_value,
        zero_variance=r_value is None,
        n_pairs=len(rows),
        per_type_kappa=per_type,
        per_layer_kappa=per_layer,
        shallow_deep_crossing=crossing,
    )


def emit_csv(header: list[str], rows, path) -> None:
    """Write rows (iterable of sequences) under a named header."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for row in rows:
            writer.writerow(list(row))


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        rows = list(reader)
    return rows[0], rows[1:]
