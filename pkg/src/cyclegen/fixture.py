"""Synthetic pseudo-battery used as a test and demo dataset.

The generator mimics a small pouch cell cycled CC-CV on charge and CC on
discharge at a controlled ambient temperature:

* charge voltage rises from about 2.8 V to the 4.2 V limit, then holds a
  constant-voltage plateau while the charge counter saturates;
* discharge voltage falls from about 4.14 V to the 2.7 V cut-off;
* temperature rises by roughly 0.8 degC during each phase;
* capacity fades linearly, cycle ``c`` holding ``1 - fade_rate * c`` of the
  nominal capacity; the discharge phase has 25% more samples than the charge
  phase.

Cycle-to-cycle variability (CV duration, residual charge at cut-off, sensor
noise) scales with ``1 + 10 * fade_rate * c`` so that aged cells are less
predictable. Every cell draws from its own stream seeded by
``(seed, cell_number)``, so cell 3 of a three-cell run is identical to a
single-cell run started at cell 3.
"""

from __future__ import annotations

import numpy as np

from .dataset import NOMINAL_CAPACITY_MAH, CycleSample

V_MIN, V_MAX = 2.7, 4.2
SAMPLE_PERIOD_S = 30.0
REST_S = 600.0
TEMP_RISE_C = 0.8


def ocv(s):
    """Open-circuit voltage of the pseudo cell at charge fraction ``s``."""
    s = np.asarray(s, dtype=float)
    return V_MIN + 1.2 * s + 0.3 * (1.0 - np.exp(-s / 0.08))


def _charge_phase(n, q_mah, cv_frac, rng, age, t_amb):
    u = np.linspace(0.0, 1.0, n)
    s_cc = 0.9
    ir = V_MAX - ocv(s_cc)
    knee = 1.0 - cv_frac
    cc = u <= knee
    s = np.empty(n)
    s[cc] = s_cc * u[cc] / knee
    w = (u[~cc] - knee) / cv_frac
    k = 3.0
    s[~cc] = s_cc + (1.0 - s_cc) * (1.0 - np.exp(-k * w)) / (1.0 - np.exp(-k))
    v = np.where(cc, ocv(s) + ir, V_MAX)
    bump = np.where(cc, (u / knee) ** 1.5, np.exp(-(u - knee) / 0.1))
    temp = t_amb + TEMP_RISE_C * bump
    v = v + rng.normal(0.0, 1e-3 * age, n)
    temp = temp + rng.normal(0.0, 0.01 * age, n)
    return np.clip(v, V_MIN, V_MAX), temp, s * q_mah


def _discharge_phase(n, q_mah, residual, rng, age, t_amb):
    u = np.linspace(0.0, 1.0, n)
    s = 1.0 - (1.0 - residual) * u
    v = V_MIN + (ocv(s) - V_MIN) * 0.96
    temp = t_amb + TEMP_RISE_C * u**2
    v = v + rng.normal(0.0, 1e-3 * age, n)
    temp = temp + rng.normal(0.0, 0.01 * age, n)
    return np.clip(v, V_MIN, V_MAX), temp, s * q_mah


def make_fixture(
    n_cells: int,
    n_cycles: int,
    length_raw: int,
    seed: int,
    fade_rate: float,
    first_cell: int = 1,
    nominal_mah: float = NOMINAL_CAPACITY_MAH,
) -> list[CycleSample]:
    """Samples for ``n_cells`` cells of ``n_cycles`` cycles each.

    ``length_raw`` is the number of charge-phase samples of a fresh cell.
    """
    if n_cells < 1 or n_cycles < 1 or length_raw < 2 or first_cell < 1:
        raise ValueError("n_cells, n_cycles must be >= 1 and length_raw >= 2")
    if seed < 0:
        raise ValueError("seed must be unsigned")
    if fade_rate < 0 or fade_rate * n_cycles >= 1:
        raise ValueError("fade_rate must be >= 0 with fade_rate * n_cycles < 1")

    out: list[CycleSample] = []
    for cell_no in range(first_cell, first_cell + n_cells):
        rng = np.random.default_rng([seed, cell_no])
        cell = f"cell{cell_no}"
        cap_scale = 1.0 + rng.uniform(-0.01, 0.01)
        t_amb = 40.0 + rng.uniform(-0.1, 0.1)
        t = 0.0
        for c in range(1, n_cycles + 1):
            faded = fade_rate * c
            age = 1.0 + 10.0 * faded
            q = nominal_mah * cap_scale * (1.0 - faded) * (1.0 + 1e-3 * rng.standard_normal())
            frac = q / nominal_mah
            cv_frac = float(np.clip(0.25 + 0.01 * age * rng.standard_normal(), 0.15, 0.35))
            residual = min(0.1, 0.01 * age * abs(rng.standard_normal()))
            n_ch = max(2, round(length_raw * frac))
            n_dis = max(2, round(1.25 * length_raw * frac))
            for phase, n, (v, temp, qm) in (
                ("charge", n_ch, _charge_phase(n_ch, q, cv_frac, rng, age, t_amb)),
                ("discharge", n_dis, _discharge_phase(n_dis, q, residual, rng, age, t_amb)),
            ):
                for i in range(n):
                    out.append(
                        CycleSample(
                            cell, c, phase, t + i * SAMPLE_PERIOD_S,
                            round(float(v[i]), 6), round(float(temp[i]), 6),
                            round(max(0.0, float(qm[i])), 6),
                        )
                    )
                t += (n - 1) * SAMPLE_PERIOD_S + REST_S
    return out
