"""Budgeted architecture grid search.

Every candidate is trained on the same small slice for the same number of
epochs with the same seed, then ranked by final-epoch training loss.
"""

from __future__ import annotations

import io
import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .dataset import AlignedPair, stack
from .nn import Architecture, TrainConfig, TrainingDiverged, param_count, train

log = logging.getLogger(__name__)

DEFAULT_DEPTHS = (2, 4, 6, 8, 10)
DEFAULT_WIDTHS = (16, 32, 64, 128)


@dataclass
class GridSpec:
    depths: tuple[int, ...] = DEFAULT_DEPTHS
    widths: tuple[int, ...] = DEFAULT_WIDTHS
    tuning_epochs: int = 50
    tuning_cycles: int = 2
    seed: int = 0
    activation: str = "relu"

    def __post_init__(self):
        self.depths = tuple(int(d) for d in self.depths)
        self.widths = tuple(int(w) for w in self.widths)
        if not self.depths or not self.widths:
            raise ValueError("depths and widths must be non-empty")
        if min(self.depths) < 1 or min(self.widths) < 1:
            raise ValueError("depths and widths must be positive")
        if self.tuning_epochs < 1 or self.tuning_cycles < 1:
            raise ValueError("tuning_epochs and tuning_cycles must be positive")


@dataclass
class CandidateResult:
    arch: Architecture
    final_loss: float
    param_count: int
    grid_index: int

    @property
    def depth(self) -> int:
        return self.arch.depth

    @property
    def width(self) -> int:
        # hidden width; the input width for single-layer candidates
        return self.arch.widths[1] if self.arch.depth > 1 else self.arch.widths[0]


@dataclass
class TuneResult:
    ranked: list[CandidateResult]
    selected: Architecture
    direction: str = "to_discharge"

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("rank,depth,width,param_count,final_loss\n")
        for i, r in enumerate(self.ranked, start=1):
            buf.write(f"{i},{r.depth},{r.width},{r.param_count},{r.final_loss!r}\n")
        return buf.getvalue()


def enumerate_grid(spec: GridSpec, d_in: int, d_out: int) -> list[Architecture]:
    """Depth x width product; each candidate has uniform hidden width."""
    return [
        Architecture((d_in,) + (w,) * (depth - 1) + (d_out,), spec.activation)
        for depth, w in itertools.product(spec.depths, spec.widths)
    ]


def _run_candidate(args) -> float:
    arch, X, Y, cfg = args
    try:
        return train(arch, X, Y, cfg).history[-1]
    except TrainingDiverged as exc:
        log.warning("candidate %s diverged: %s", arch.widths, exc)
        return math.inf


def rank(results: list[CandidateResult]) -> list[CandidateResult]:
    """Sort by (loss, param_count, grid index)."""
    return sorted(results, key=lambda r: (r.final_loss, r.param_count, r.grid_index))


def tune(
    spec: GridSpec,
    pairs_slice: list[AlignedPair],
    direction: str = "to_discharge",
    train_cfg: TrainConfig | None = None,
    jobs: int = 1,
) -> TuneResult:
    """Train every grid candidate on ``pairs_slice`` and pick the best.

    ``train_cfg`` supplies optimizer settings; its epochs and seed are
    replaced by the grid's tuning budget and seed. Results do not depend on
    ``jobs`` since each candidate reseeds from ``spec.seed``.
    """
    if not pairs_slice:
        raise ValueError("tuning slice is empty")
    X, Y = stack(pairs_slice)
    cfg = replace(train_cfg or TrainConfig(), epochs=spec.tuning_epochs, seed=spec.seed)
    archs = enumerate_grid(spec, X.shape[1], Y.shape[1])
    work = [(a, X, Y, cfg) for a in archs]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            losses = list(pool.map(_run_candidate, work))
    else:
        losses = [_run_candidate(w) for w in work]

    results = [CandidateResult(a, float(l), param_count(a), i) for i, (a, l) in enumerate(zip(archs, losses))]
    for r in results:
        log.info("candidate depth=%d width=%d params=%d loss=%.6g", r.depth, r.width, r.param_count, r.final_loss)
    ranked = rank(results)
    if not np.isfinite(ranked[0].final_loss):
        raise TrainingDiverged("every tuning candidate diverged")
    return TuneResult(ranked, ranked[0].arch, direction)
