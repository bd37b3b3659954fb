"""Coupled ChargeNet/DischargeNet models and chained cycle generation.

The DischargeNet maps a cycle's charge profile to the same cycle's discharge
profile; the ChargeNet maps a discharge profile to the *next* cycle's charge
profile. Alternating the two therefore walks forward through cycle life,
each discharge-to-charge hop opening a new synthetic cycle.
"""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from . import dataset as ds
from .metrics import rmse
from .nn import Architecture, ModelWeights, NormStats, ShapeError, TrainConfig, forward, train

log = logging.getLogger(__name__)

STOP_REASONS = ("threshold_exceeded", "max_hops", "bound_violation")
NET_FOR_PHASE = {"charge": "discharge_net", "discharge": "charge_net"}
NEXT_PHASE = {"charge": "discharge", "discharge": "charge"}


class CalibrationError(ValueError):
    pass


@dataclass
class CoupledModel:
    charge_net: ModelWeights
    discharge_net: ModelWeights
    parameter: str
    calibrated_hop_error: Optional[float] = None

    def __post_init__(self):
        c, d = self.charge_net, self.discharge_net
        if c.arch.d_in != d.arch.d_in or c.arch.d_out != d.arch.d_out or c.arch.d_in != c.arch.d_out:
            raise ShapeError("ChargeNet and DischargeNet must map length-L profiles to length-L profiles")
        if c.output_stats != d.output_stats or c.input_stats != d.input_stats:
            raise ValueError("ChargeNet and DischargeNet must share normalization stats")
        for net in (c, d):
            if net.parameter not in (None, self.parameter):
                raise ValueError(f"network trained for {net.parameter}, not {self.parameter}")

    @property
    def length(self) -> int:
        return self.charge_net.arch.d_in

    @property
    def stats(self) -> NormStats:
        return self.charge_net.output_stats

    def net(self, direction: str) -> ModelWeights:
        return {"to_charge": self.charge_net, "to_discharge": self.discharge_net}[direction]


def shared_architecture(selected: Architecture) -> tuple[Architecture, Architecture]:
    """Both directions of a parameter use the architecture tuned on one of them."""
    return selected, selected


def train_network(arch: Architecture, pairs: list[ds.AlignedPair], cfg: TrainConfig):
    """Train one direction on aligned pairs; returns (model, loss history)."""
    if not pairs:
        raise ds.DataError("no training pairs")
    X, Y = ds.stack(pairs)
    stats = pairs[0].stats
    res = train(arch, X, Y, cfg, input_stats=stats, output_stats=stats)
    res.model.parameter = pairs[0].parameter
    res.model.direction = "charge" if pairs[0].direction == "to_charge" else "discharge"
    return res.model, res.history


def train_coupled(arch: Architecture, pairs: ds.PairSet, cfg: TrainConfig):
    """Train DischargeNet and ChargeNet for one parameter.

    Returns the coupled model and a dict of per-epoch loss histories keyed
    by direction.
    """
    charge_arch, discharge_arch = shared_architecture(arch)
    dnet, dhist = train_network(discharge_arch, pairs.to_discharge, cfg)
    cnet, chist = train_network(charge_arch, pairs.to_charge, cfg)
    model = CoupledModel(cnet, dnet, pairs.to_discharge[0].parameter)
    return model, {"to_charge": chist, "to_discharge": dhist}


def predict_hop(model: CoupledModel, profile, current_phase: str) -> tuple[np.ndarray, str]:
    """Map a normalized profile of ``current_phase`` to the opposite phase."""
    if current_phase not in NET_FOR_PHASE:
        raise ValueError(f"unknown phase {current_phase!r}")
    x = np.asarray(profile, dtype=float)
    if x.shape != (model.length,):
        raise ShapeError(f"expected profile of length {model.length}, got shape {x.shape}")
    net = getattr(model, NET_FOR_PHASE[current_phase])
    return forward(net, x), NEXT_PHASE[current_phase]


def calibrate_hop_error(model: CoupledModel, validation: ds.PairSet) -> float:
    """Mean per-hop RMSE (normalized units) over both validation directions."""
    if not validation.to_charge or not validation.to_discharge:
        raise CalibrationError("calibration needs at least one validation pair per direction")
    errs = []
    for direction in ds.DIRECTIONS:
        net = model.net(direction)
        for p in validation.direction(direction):
            if p.stats != model.stats:
                raise CalibrationError("validation pairs use different normalization stats")
            errs.append(rmse(forward(net, p.input), p.target))
    model.calibrated_hop_error = float(np.mean(errs))
    return model.calibrated_hop_error


@dataclass(frozen=True)
class Bounds:
    low: float
    high: float

    def contains(self, values) -> bool:
        v = np.asarray(values)
        return bool(np.all((v >= self.low) & (v <= self.high)))


def default_bounds(parameter: str, stats: NormStats) -> Bounds:
    if parameter == "voltage":
        return Bounds(*ds.VOLTAGE_SANITY)
    if parameter == "soc":
        return Bounds(-5.0, 105.0)
    if parameter == "temperature":
        return Bounds(stats.min - 5.0, stats.max + 5.0)
    raise ValueError(f"unknown parameter {parameter!r}")


@dataclass
class Hop:
    phase: str
    cycle_index: int
    values: np.ndarray


@dataclass
class GenerationChain:
    parameter: str
    seed_profile: np.ndarray
    seed_phase: str
    seed_cycle: int
    calibrated_hop_error: float
    hops: list[Hop] = field(default_factory=list)
    accumulated_error: float = 0.0
    stop_reason: str = ""
    cell_id: str = "synthetic"

    def metadata(self) -> dict:
        return {
            "parameter": self.parameter,
            "cell_id": self.cell_id,
            "seed_cycle": self.seed_cycle,
            "seed_phase": self.seed_phase,
            "hops": len(self.hops),
            "accumulated_error": self.accumulated_error,
            "stop_reason": self.stop_reason,
            "calibrated_hop_error": self.calibrated_hop_error,
        }


def generate_chain(
    model: CoupledModel,
    seed_profile,
    seed_phase: str,
    threshold: float,
    max_hops: int,
    bounds: Optional[Bounds] = None,
    seed_cycle: int = 1,
    cell_id: str = "synthetic",
) -> GenerationChain:
    """Alternate the two networks starting from a normalized seed profile.

    After ``k`` hops the accumulated error is ``k * e`` with ``e`` the
    calibrated per-hop error. Generation stops before a hop that would push
    it past ``threshold``, after ``max_hops`` hops, or when a denormalized
    hop leaves ``bounds`` (the offending hop is discarded).
    """
    e = model.calibrated_hop_error
    if e is None:
        raise CalibrationError("model has no calibrated hop error; run calibrate_hop_error first")
    if threshold < 0 or max_hops < 0:
        raise ValueError("threshold and max_hops must be >= 0")
    if bounds is None:
        bounds = default_bounds(model.parameter, model.stats)

    seed = np.asarray(seed_profile, dtype=float)
    chain = GenerationChain(model.parameter, seed, seed_phase, seed_cycle, e, cell_id=cell_id)
    profile, phase, cycle = seed, seed_phase, seed_cycle
    while True:
        k = len(chain.hops)
        if k == max_hops:
            chain.stop_reason = "max_hops"
            break
        if (k + 1) * e > threshold:
            chain.stop_reason = "threshold_exceeded"
            break
        profile, phase = predict_hop(model, profile, phase)
        if phase == "charge":
            cycle += 1
        if not bounds.contains(ds.denormalize(profile, model.stats)):
            chain.stop_reason = "bound_violation"
            break
        chain.hops.append(Hop(phase, cycle, profile))
        chain.accumulated_error = (k + 1) * e
    return chain


def export_chains(
    chains: Mapping[str, GenerationChain],
    stats: Mapping[str, NormStats],
    time_step_s: float = 30.0,
    reference_mah: float = ds.NOMINAL_CAPACITY_MAH,
) -> str:
    """Synthetic samples as CSV text in the ingestion schema.

    Chains for several parameters generated from the same seed cycle are
    merged column-wise (truncated to the shortest); columns without a chain
    are left blank. State of charge is written back as charge in mAh.
    """
    if not chains:
        raise ValueError("nothing to export")
    first = next(iter(chains.values()))
    n_hops = min(len(c.hops) for c in chains.values())
    for c in chains.values():
        if (c.seed_phase, c.seed_cycle, c.cell_id) != (first.seed_phase, first.seed_cycle, first.cell_id):
            raise ValueError("chains must share seed phase, cycle and cell")
    if time_step_s <= 0:
        raise ValueError("time step must be positive")

    samples = []
    t0 = 0.0
    for k in range(n_hops):
        hop = first.hops[k]
        cols = {}
        for param, chain in chains.items():
            vals = ds.denormalize(chain.hops[k].values, stats[param])
            if param == "soc":
                # clamp tiny negative predictions so the counter stays valid
                vals = np.maximum(vals, 0.0) * reference_mah / 100.0
            cols[ds._COLUMN[param]] = vals
        for i in range(len(hop.values)):
            samples.append(
                ds.CycleSample(
                    first.cell_id, hop.cycle_index, hop.phase, t0 + i * time_step_s,
                    *(float(cols[c][i]) if c in cols else None for c in ("voltage_v", "temperature_c", "charge_mah")),
                    provenance="synthetic",
                )
            )
        t0 += len(hop.values) * time_step_s
    return ds.format_csv(samples, provenance=True)


def export_chain(chain: GenerationChain, stats: NormStats, out: Optional[io.TextIOBase] = None, **kw) -> str:
    text = export_chains({chain.parameter: chain}, {chain.parameter: stats}, **kw)
    if out is not None:
        out.write(text)
    return text
