"""Cycling data ingestion and preprocessing.

CSV rows are grouped into per-phase profiles, equalized by tail padding,
resampled to the fixed network length and min/max normalized before being
turned into (input, target) training pairs for both network directions.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Optional, TextIO

import numpy as np

from .nn import NormStats

log = logging.getLogger(__name__)

HEADER = ("cell_id", "cycle_index", "phase", "time_s", "voltage_v", "temperature_c", "charge_mah")
HEADER_NO_PHASE = tuple(c for c in HEADER if c != "phase")
PARAMETERS = ("voltage", "soc", "temperature")
PHASES = ("charge", "discharge")
DIRECTIONS = ("to_charge", "to_discharge")

NOMINAL_CAPACITY_MAH = 740.0
VOLTAGE_SANITY = (2.0, 4.5)
DEFAULT_LENGTH = 128

_COLUMN = {"voltage": "voltage_v", "temperature": "temperature_c", "soc": "charge_mah"}


class DataError(ValueError):
    """Malformed or structurally invalid cycling data."""


@dataclass(frozen=True)
class CycleSample:
    cell_id: str
    cycle_index: int
    phase: Optional[str]
    time_s: float
    voltage_v: Optional[float]
    temperature_c: Optional[float]
    charge_mah: Optional[float]
    provenance: Optional[str] = None


@dataclass
class PhaseProfile:
    parameter: str
    cell_id: str
    cycle_index: int
    phase: str
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 1 or self.values.size == 0:
            raise DataError(f"{self.key}: profile must be a non-empty vector")
        if not np.isfinite(self.values).all():
            raise DataError(f"{self.key}: non-finite values")
        if self.parameter == "voltage":
            lo, hi = VOLTAGE_SANITY
            if self.values.min() < lo or self.values.max() > hi:
                raise DataError(f"{self.key}: voltage outside [{lo}, {hi}] V")

    @property
    def key(self) -> tuple:
        return (self.cell_id, self.cycle_index, self.phase, self.parameter)


@dataclass
class AlignedPair:
    input: np.ndarray
    target: np.ndarray
    parameter: str
    direction: str
    cell_id: str
    source_cycle: int
    target_cycle: int
    stats: NormStats


@dataclass
class PairSet:
    to_discharge: list[AlignedPair] = field(default_factory=list)
    to_charge: list[AlignedPair] = field(default_factory=list)
    skipped: int = 0

    def direction(self, name: str) -> list[AlignedPair]:
        if name not in DIRECTIONS:
            raise ValueError(f"unknown direction {name!r}")
        return self.to_charge if name == "to_charge" else self.to_discharge


# --- CSV -------------------------------------------------------------------


def _num(text: str, column: str, lineno: int, optional: bool) -> Optional[float]:
    text = text.strip()
    if text == "" and optional:
        return None
    try:
        v = float(text)
    except ValueError:
        raise DataError(f"line {lineno}: cannot parse {column}={text!r}") from None
    if not math.isfinite(v):
        raise DataError(f"line {lineno}: non-finite {column}")
    return v


def parse_csv(stream: TextIO) -> list[CycleSample]:
    """Read cycling samples from CSV text.

    The header must be exactly ``HEADER``, optionally followed by a
    ``provenance`` column. A header without the ``phase`` column is also
    accepted; phases are then left unset for :func:`segment_by_slope`.
    Measurement cells may be blank (exports of a single parameter).
    """
    reader = csv.reader(stream)
    try:
        header = tuple(h.strip() for h in next(reader))
    except StopIteration:
        raise DataError("line 1: missing header") from None
    if header and header[0].startswith("﻿"):
        header = (header[0][1:],) + header[1:]
    has_prov = header[-1:] == ("provenance",)
    cols = header[:-1] if has_prov else header
    if cols == HEADER:
        has_phase = True
    elif cols == HEADER_NO_PHASE:
        has_phase = False
    else:
        missing = [c for c in HEADER if c not in cols]
        raise DataError(f"line 1: bad header {list(header)}; missing {missing}" if missing
                        else f"line 1: bad header {list(header)}")

    width = len(header)
    out: list[CycleSample] = []
    last_time: dict[tuple, float] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != width:
            raise DataError(f"line {lineno}: expected {width} fields, got {len(row)}")
        rec = dict(zip(header, row))
        cell = rec["cell_id"].strip()
        if not cell:
            raise DataError(f"line {lineno}: empty cell_id")
        try:
            cycle = int(rec["cycle_index"])
        except ValueError:
            raise DataError(f"line {lineno}: cannot parse cycle_index={rec['cycle_index']!r}") from None
        if cycle < 1:
            raise DataError(f"line {lineno}: cycle_index must be >= 1")
        phase = None
        if has_phase:
            phase = rec["phase"].strip()
            if phase not in PHASES:
                raise DataError(f"line {lineno}: unknown phase {phase!r}")
        t = _num(rec["time_s"], "time_s", lineno, optional=False)
        if t < 0:
            raise DataError(f"line {lineno}: negative time_s")
        q = _num(rec["charge_mah"], "charge_mah", lineno, optional=True)
        if q is not None and q < 0:
            raise DataError(f"line {lineno}: negative charge_mah")
        key = (cell, cycle, phase)
        if key in last_time and not t > last_time[key]:
            raise DataError(f"line {lineno}: time_s not strictly increasing within {cell} cycle {cycle} {phase or ''}".rstrip())
        last_time[key] = t
        prov = rec["provenance"].strip() if has_prov else None
        if prov is not None and prov not in ("real", "synthetic"):
            raise DataError(f"line {lineno}: provenance must be real or synthetic")
        out.append(
            CycleSample(
                cell, cycle, phase, t,
                _num(rec["voltage_v"], "voltage_v", lineno, optional=True),
                _num(rec["temperature_c"], "temperature_c", lineno, optional=True),
                q, prov,
            )
        )
    return out


def read_csv(path) -> list[CycleSample]:
    with open(path, newline="", encoding="utf-8") as fh:
        return parse_csv(fh)


def _fmt(v: Optional[float]) -> str:
    return "" if v is None else repr(float(v))


def format_csv(samples: Iterable[CycleSample], provenance: bool = False) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HEADER + (("provenance",) if provenance else ()))
    for s in samples:
        row = [s.cell_id, s.cycle_index, s.phase, _fmt(s.time_s), _fmt(s.voltage_v),
               _fmt(s.temperature_c), _fmt(s.charge_mah)]
        if provenance:
            row.append(s.provenance or "real")
        w.writerow(row)
    return buf.getvalue()


# --- segmentation ------------------------------------------------------------


def segment_by_slope(samples: list[CycleSample]) -> list[CycleSample]:
    """Assign phases from the direction of charge_mah within each cycle.

    Fallback for data without a phase column: samples where the charge
    counter rises (or has not yet peaked) belong to the charge phase, the
    rest to discharge. The split point is the maximum of charge_mah.
    """
    groups: dict[tuple, list[int]] = defaultdict(list)
    for i, s in enumerate(samples):
        groups[(s.cell_id, s.cycle_index)].append(i)
    phases: dict[int, str] = {}
    for key, idx in groups.items():
        q = [samples[i].charge_mah for i in idx]
        if any(v is None for v in q):
            raise DataError(f"cell {key[0]} cycle {key[1]}: charge_mah required to infer phases")
        peak = int(np.argmax(q))
        for j, i in enumerate(idx):
            phases[i] = "charge" if j <= peak else "discharge"
    return [
        CycleSample(s.cell_id, s.cycle_index, phases[i], s.time_s, s.voltage_v,
                    s.temperature_c, s.charge_mah, s.provenance)
        for i, s in enumerate(samples)
    ]


def soc_from_charge(charge_mah, reference_mah: float = NOMINAL_CAPACITY_MAH):
    """State of charge in percent of a fixed reference capacity."""
    if not reference_mah > 0:
        raise ValueError("reference capacity must be > 0")
    q = np.asarray(charge_mah, dtype=float)
    if (q < 0).any():
        raise ValueError("charge must be >= 0")
    soc = 100.0 * q / reference_mah
    return float(soc) if soc.ndim == 0 else soc


def segment(samples: list[CycleSample], reference_mah: float = NOMINAL_CAPACITY_MAH) -> list[PhaseProfile]:
    """Group samples into one profile per (cell, cycle, phase, parameter).

    Parameters whose column is blank for an entire phase are omitted;
    partially blank phases are an error.
    """
    groups: dict[tuple, list[CycleSample]] = {}
    for s in samples:
        if s.phase is None:
            raise DataError("samples carry no phase; run segment_by_slope first")
        groups.setdefault((s.cell_id, s.cycle_index, s.phase), []).append(s)

    profiles = []
    for (cell, cycle, phase), rows in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1], PHASES.index(kv[0][2]))):
        if len(rows) < 2:
            raise DataError(f"cell {cell} cycle {cycle} {phase}: phase needs at least 2 samples, got {len(rows)}")
        for param in PARAMETERS:
            raw = [getattr(r, _COLUMN[param]) for r in rows]
            n_blank = sum(v is None for v in raw)
            if n_blank == len(raw):
                continue
            if n_blank:
                raise DataError(f"cell {cell} cycle {cycle} {phase}: {n_blank} blank {_COLUMN[param]} values")
            vals = np.array(raw, dtype=float)
            if param == "soc":
                vals = soc_from_charge(vals, reference_mah)
            profiles.append(PhaseProfile(param, cell, cycle, phase, vals))
    return profiles


# --- vector transforms -------------------------------------------------------


def pad_tail(values, target_len: int) -> np.ndarray:
    """Extend ``values`` to ``target_len`` by repeating its last entry."""
    v = np.asarray(values, dtype=float)
    if v.size < 1:
        raise ValueError("cannot pad an empty vector")
    if target_len < v.size:
        raise ValueError(f"target length {target_len} shorter than input {v.size}")
    return np.concatenate([v, np.full(target_len - v.size, v[-1])])


def resample_linear(values, length: int) -> np.ndarray:
    """Linear interpolation onto ``length`` uniformly spaced positions."""
    v = np.asarray(values, dtype=float)
    if v.size < 2 or length < 2:
        raise ValueError("resampling needs at least 2 input and 2 output points")
    pos = np.linspace(0.0, v.size - 1, length)
    out = np.interp(pos, np.arange(v.size, dtype=float), v)
    out[0], out[-1] = v[0], v[-1]
    return out


def normalize(values, stats: NormStats):
    return (np.asarray(values, dtype=float) - stats.min) / (stats.max - stats.min)


def denormalize(values, stats: NormStats):
    return np.asarray(values, dtype=float) * (stats.max - stats.min) + stats.min


def compute_stats(profiles: Iterable[PhaseProfile], parameter: str) -> NormStats:
    vals = [p.values for p in profiles if p.parameter == parameter]
    if not vals:
        raise DataError(f"no {parameter} profiles to compute normalization from")
    allv = np.concatenate(vals)
    return NormStats(float(allv.min()), float(allv.max()))


def prepare_pair(inp, tgt, length: int, stats: NormStats) -> tuple[np.ndarray, np.ndarray]:
    """Pad the shorter raw profile to the longer, resample both, normalize."""
    n = max(len(inp), len(tgt))
    a = resample_linear(pad_tail(inp, n), length)
    b = resample_linear(pad_tail(tgt, n), length)
    return normalize(a, stats), normalize(b, stats)


def prepare_profile(values, length: int, stats: NormStats, pad_to: Optional[int] = None) -> np.ndarray:
    """Single-profile version of :func:`prepare_pair`, for generation seeds."""
    v = np.asarray(values, dtype=float)
    if pad_to is not None and pad_to > v.size:
        v = pad_tail(v, pad_to)
    return normalize(resample_linear(v, length), stats)


def complete_cycles(profiles: Iterable[PhaseProfile], parameter: str) -> dict[tuple, dict[str, PhaseProfile]]:
    """Map (cell, cycle) -> {phase: profile} for cycles that have both phases."""
    by_cycle: dict[tuple, dict[str, PhaseProfile]] = defaultdict(dict)
    for p in profiles:
        if p.parameter == parameter:
            by_cycle[(p.cell_id, p.cycle_index)][p.phase] = p
    return {k: v for k, v in sorted(by_cycle.items()) if len(v) == 2}


def build_pairs(profiles: list[PhaseProfile], parameter: str, length: int, stats: NormStats) -> PairSet:
    """Training pairs for both networks of one parameter.

    to_discharge: charge of cycle c -> discharge of cycle c.
    to_charge: discharge of cycle c -> charge of cycle c + 1 (same cell).
    Cycles missing a phase are ignored; a to_charge pair without a complete
    successor cycle is skipped and counted in ``skipped``.
    """
    if parameter not in PARAMETERS:
        raise ValueError(f"unknown parameter {parameter!r}")
    cycles = complete_cycles(profiles, parameter)
    out = PairSet()
    for (cell, c), ph in cycles.items():
        x, y = prepare_pair(ph["charge"].values, ph["discharge"].values, length, stats)
        out.to_discharge.append(AlignedPair(x, y, parameter, "to_discharge", cell, c, c, stats))
        nxt = cycles.get((cell, c + 1))
        if nxt is None:
            out.skipped += 1
            continue
        x, y = prepare_pair(ph["discharge"].values, nxt["charge"].values, length, stats)
        out.to_charge.append(AlignedPair(x, y, parameter, "to_charge", cell, c, c + 1, stats))
    if out.skipped:
        log.info("%s: skipped %d to_charge pairs without a successor cycle", parameter, out.skipped)
    return out


def stack(pairs: list[AlignedPair]) -> tuple[np.ndarray, np.ndarray]:
    if not pairs:
        raise DataError("no pairs")
    return np.stack([p.input for p in pairs]), np.stack([p.target for p in pairs])
