"""Error metrics and per-cycle evaluation reports."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import DIRECTIONS, denormalize
from .nn import forward


def _pair(pred, truth):
    p = np.asarray(pred, dtype=float)
    t = np.asarray(truth, dtype=float)
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {t.shape}")
    if p.size == 0:
        raise ValueError("metrics need at least one point")
    return p, t


def mse(pred, truth) -> float:
    p, t = _pair(pred, truth)
    d = p - t
    return float(np.mean(d * d))


def mae(pred, truth) -> float:
    p, t = _pair(pred, truth)
    return float(np.mean(np.abs(p - t)))


def rmse(pred, truth) -> float:
    return math.sqrt(mse(pred, truth))


@dataclass
class CycleMetrics:
    cycle_index: int
    mse: float
    mae: float
    rmse: float

    @classmethod
    def of(cls, cycle_index: int, pred, truth) -> "CycleMetrics":
        m = mse(pred, truth)
        return cls(cycle_index, m, mae(pred, truth), math.sqrt(m))


@dataclass
class MetricsReport:
    per_cycle: list[CycleMetrics]
    n: int
    label: str = ""
    aggregate: dict = field(init=False)

    def __post_init__(self):
        if not self.per_cycle:
            raise ValueError("a report needs at least one cycle")
        # mean of per-cycle values, not pooled over points
        self.aggregate = {
            k: float(np.mean([getattr(r, k) for r in self.per_cycle])) for k in ("mse", "mae", "rmse")
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("cycle_index,mse,mae,rmse\n")
        for r in self.per_cycle:
            buf.write(f"{r.cycle_index},{r.mse!r},{r.mae!r},{r.rmse!r}\n")
        return buf.getvalue()


def report(rows: list[tuple[int, np.ndarray, np.ndarray]], label: str = "") -> MetricsReport:
    """Build a report from ``(cycle_index, predicted, true)`` triples."""
    per = [CycleMetrics.of(c, p, t) for c, p, t in rows]
    return MetricsReport(per, n=len(rows[0][1]) if rows else 0, label=label)


def ols_slope(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2:
        raise ValueError("a trend needs at least 2 cycles")
    xc = x - x.mean()
    denom = float(xc @ xc)
    if denom == 0:
        raise ValueError("cycle indices are all equal")
    return float(xc @ (y - y.mean()) / denom)


def cycle_trend(rep: MetricsReport) -> dict[str, float]:
    """Least-squares slope of each per-cycle metric against cycle index."""
    if len(rep.per_cycle) < 2:
        raise ValueError("a trend needs at least 2 cycles")
    x = [r.cycle_index for r in rep.per_cycle]
    return {k: ols_slope(x, [getattr(r, k) for r in rep.per_cycle]) for k in ("mse", "mae", "rmse")}


def evaluate(model, pairs) -> dict[str, MetricsReport]:
    """Per-cycle metrics in physical units for both directions of a coupled model.

    ``pairs`` is a :class:`~cyclegen.dataset.PairSet`; each pair yields one
    row keyed by the cycle of its target profile.
    """
    out = {}
    for direction in DIRECTIONS:
        test = pairs.direction(direction)
        if not test:
            continue
        net = model.net(direction)
        rows = []
        for p in test:
            if p.stats != net.output_stats:
                raise ValueError("test pairs were normalized with different stats than the model")
            pred = denormalize(forward(net, p.input), p.stats)
            rows.append((p.target_cycle, pred, denormalize(p.target, p.stats)))
        out[direction] = report(rows, label=f"{model.parameter}/{direction}")
    if not out:
        raise ValueError("empty test set")
    return out
