"""Command-line entry point: fixture, tune, train, generate, eval, plot.

Options can also come from a ``--config`` file of ``key = value`` lines
(keys are option names, dashes or underscores); command-line flags win.
Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical divergence.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import math
import os
import sys
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from . import dataset as ds
from .coupled import (
    Bounds,
    CoupledModel,
    calibrate_hop_error,
    export_chain,
    generate_chain,
    train_coupled,
)
from .fixture import make_fixture
from .metrics import cycle_trend, evaluate
from .modelio import atomic_write, dumps_json, load_model, save_model
from .nn import Architecture, TrainConfig, TrainingDiverged, forward
from .tuner import GridSpec, tune

log = logging.getLogger("cyclegen")

EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 2, 3, 4
UNITS = {"voltage": "V", "soc": "%", "temperature": "degC"}


class UsageError(Exception):
    pass


def _int_list(text) -> tuple[int, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(int(v) for v in text)
    try:
        vals = tuple(int(v) for v in str(text).replace(" ", "").split(",") if v)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _pos_int(text) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _nonneg_int(text) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


# --- parser ------------------------------------------------------------------

_DEFAULTS: dict[str, dict] = {}


def _opt(p: argparse.ArgumentParser, flag: str, default=None, **kw):
    """Add an option whose default is applied after config-file merging."""
    dest = flag.lstrip("-").replace("-", "_")
    _DEFAULTS.setdefault(p.prog, {})[dest] = default
    if default is not None and "help" in kw:
        kw["help"] += f" (default: {default})"
    p.add_argument(flag, dest=dest, default=None, **kw)


def _common(p):
    p.add_argument("--config", type=Path, help="key = value config file")
    _opt(p, "--seed", 0, type=_nonneg_int, help="random seed")
    _opt(p, "--out-dir", Path("."), type=Path, help="output directory")
    _opt(p, "--param", "voltage", choices=ds.PARAMETERS, help="battery parameter")
    _opt(p, "--length", ds.DEFAULT_LENGTH, type=_pos_int, help="fixed profile length L")
    _opt(p, "--soc-ref-mah", ds.NOMINAL_CAPACITY_MAH, type=float, help="SOC reference capacity in mAh")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cyclegen", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fixture", help="write a synthetic pseudo-battery CSV")
    _common(p)
    _opt(p, "--cells", 1, type=_pos_int, help="number of cells")
    _opt(p, "--cycles", 4, type=_pos_int, help="cycles per cell")
    _opt(p, "--first-cell", 1, type=_pos_int, help="number of the first cell")
    _opt(p, "--length-raw", 200, type=_pos_int, help="charge samples of a fresh cell")
    _opt(p, "--fade-rate", 0.0033, type=float, help="capacity fade per cycle")
    p.add_argument("--out", type=Path, help="output CSV (default: OUT_DIR/fixture.csv)")

    p = sub.add_parser("tune", help="grid-search the architecture on a small slice")
    _common(p)
    _opt(p, "--data", type=Path, help="training CSV")
    _opt(p, "--depths", (2, 4, 6, 8, 10), type=_int_list, help="weight-layer counts")
    _opt(p, "--widths", (16, 32, 64, 128), type=_int_list, help="hidden widths")
    _opt(p, "--epochs", 50, type=_pos_int, help="tuning epochs per candidate")
    _opt(p, "--tuning-cycles", 2, type=_pos_int, help="cycles of the first cell used for tuning")
    _opt(p, "--activation", "relu", choices=("relu", "tanh"), help="hidden activation")
    _opt(p, "--lr", 1e-3, type=float, help="Adam learning rate")
    _opt(p, "--batch-size", 16, type=_pos_int, help="minibatch size")
    _opt(p, "--jobs", 1, type=_pos_int, help="parallel candidate processes")

    p = sub.add_parser("train", help="train ChargeNet and DischargeNet")
    _common(p)
    _opt(p, "--data", type=Path, help="training CSV")
    _opt(p, "--arch", type=Path, help="architecture JSON from tune (default: OUT_DIR/arch-PARAM.json)")
    _opt(p, "--epochs", 400, type=_pos_int, help="training epochs")
    _opt(p, "--lr", 1e-3, type=float, help="Adam learning rate")
    _opt(p, "--batch-size", 16, type=_pos_int, help="minibatch size")
    _opt(p, "--val-data", type=Path, help="held-out CSV for hop-error calibration (default: training data)")

    p = sub.add_parser("generate", help="chain the networks to synthesize cycles")
    _common(p)
    _opt(p, "--data", type=Path, help="CSV holding the seed cycle")
    _opt(p, "--model-dir", type=Path, help="directory with trained models (default: OUT_DIR)")
    _opt(p, "--seed-cell", type=str, help="cell of the seed cycle (default: first cell)")
    _opt(p, "--seed-cycle", type=_pos_int, help="seed cycle index (default: last complete cycle)")
    _opt(p, "--seed-phase", "discharge", choices=ds.PHASES, help="phase of the seed profile")
    _opt(p, "--threshold", math.inf, type=float, help="accumulated-error threshold, normalized units")
    _opt(p, "--max-hops", 100, type=_nonneg_int, help="maximum number of hops")
    _opt(p, "--time-step", type=float, help="seconds between synthetic samples (default: seed phase duration / (L-1))")
    _opt(p, "--bounds", type=str, help="physical bounds LOW,HIGH in parameter units")

    p = sub.add_parser("eval", help="per-cycle metrics on test data")
    _common(p)
    _opt(p, "--data", type=Path, help="test CSV")
    _opt(p, "--model-dir", type=Path, help="directory with trained models (default: OUT_DIR)")
    p.add_argument("--drive-cycle", action="store_true", help="print a MAE/RMSE drive-cycle summary")

    p = sub.add_parser("plot", help="truth vs prediction overlay for one cycle")
    _common(p)
    _opt(p, "--data", type=Path, help="CSV holding the cycle")
    _opt(p, "--model-dir", type=Path, help="directory with trained models (default: OUT_DIR)")
    _opt(p, "--cell", type=str, help="cell id (default: first cell)")
    _opt(p, "--cycle", 1, type=_pos_int, help="target cycle index")
    _opt(p, "--direction", "to_discharge", choices=ds.DIRECTIONS, help="which network to plot")
    return parser


def _read_config(path: Path) -> dict[str, str]:
    text = path.read_text(encoding="utf-8")
    cp = configparser.ConfigParser(interpolation=None)
    if not text.lstrip().startswith("["):
        text = "[cyclegen]\n" + text
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise UsageError(f"{path}: {exc}") from None
    out = {}
    for section in cp.sections():
        for k, v in cp.items(section):
            out[k.replace("-", "_")] = v.strip().strip('"')
    return out


def resolve(parser: argparse.ArgumentParser, argv=None) -> argparse.Namespace:
    """Parse flags, fill unset options from the config file, then defaults."""
    args = parser.parse_args(argv)
    subparser = parser._subparsers._group_actions[0].choices[args.command]
    defaults = _DEFAULTS[subparser.prog]
    cfg = {}
    if args.config is not None:
        if not args.config.exists():
            raise UsageError(f"config file {args.config} does not exist")
        cfg = _read_config(args.config)
        unknown = set(cfg) - set(defaults)
        if unknown:
            raise UsageError(f"unknown config keys for {args.command}: {sorted(unknown)}")
    for action in subparser._actions:
        dest = action.dest
        if dest not in defaults or getattr(args, dest) is not None:
            continue
        if dest in cfg:
            raw = cfg[dest]
            try:
                val = action.type(raw) if action.type else raw
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise UsageError(f"config {dest}: {exc}") from None
            if action.choices and val not in action.choices:
                raise UsageError(f"config {dest}: {val!r} not in {list(action.choices)}")
            setattr(args, dest, val)
        else:
            setattr(args, dest, defaults[dest])
    return args


# --- helpers -----------------------------------------------------------------


def _need(path, what: str) -> Path:
    if path is None:
        raise UsageError(f"{what} is required")
    path = Path(path)
    if not path.exists():
        raise UsageError(f"{what} {path} does not exist")
    return path


def _profiles(path: Path, ref_mah: float) -> list[ds.PhaseProfile]:
    samples = ds.read_csv(path)
    if samples and samples[0].phase is None:
        samples = ds.segment_by_slope(samples)
    return ds.segment(samples, ref_mah)


def _model_dir(args) -> Path:
    return Path(args.model_dir) if args.model_dir is not None else Path(args.out_dir)


def _load_coupled(args) -> CoupledModel:
    d = _model_dir(args)
    manifest = _need(d / f"coupled-{args.param}.json", "coupled model manifest")
    meta = json.loads(manifest.read_text(encoding="utf-8"))
    model = CoupledModel(
        load_model(_need(d / meta["charge_model"], "ChargeNet model")),
        load_model(_need(d / meta["discharge_model"], "DischargeNet model")),
        args.param,
        meta.get("calibrated_hop_error"),
    )
    if model.length != args.length:
        log.info("using model length %d instead of --length %d", model.length, args.length)
    return model


def _first_cell(profiles) -> str:
    cells = sorted({p.cell_id for p in profiles})
    if not cells:
        raise ds.DataError("no profiles in data")
    return cells[0]


# --- commands ----------------------------------------------------------------


def cmd_fixture(args) -> int:
    try:
        samples = make_fixture(args.cells, args.cycles, args.length_raw, args.seed, args.fade_rate, args.first_cell)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = args.out or Path(args.out_dir) / "fixture.csv"
    atomic_write(out, ds.format_csv(samples))
    print(f"wrote {len(samples)} samples to {out}")
    return 0


def cmd_tune(args) -> int:
    profiles = _profiles(_need(args.data, "--data"), args.soc_ref_mah)
    stats = ds.compute_stats(profiles, args.param)
    cell = _first_cell(profiles)
    cycles = sorted(c for (cid, c) in ds.complete_cycles(profiles, args.param) if cid == cell)[: args.tuning_cycles]
    slice_profiles = [p for p in profiles if p.cell_id == cell and p.cycle_index in cycles]
    pairs = ds.build_pairs(slice_profiles, args.param, args.length, stats).to_discharge
    spec = GridSpec(args.depths, args.widths, args.epochs, args.tuning_cycles, args.seed, args.activation)
    cfg = TrainConfig(epochs=args.epochs, learning_rate=args.lr, batch_size=args.batch_size, seed=args.seed)
    result = tune(spec, pairs, "to_discharge", cfg, jobs=args.jobs)

    out = Path(args.out_dir)
    atomic_write(out / f"tune-{args.param}.csv", result.to_csv())
    best = result.ranked[0]
    atomic_write(
        out / f"arch-{args.param}.json",
        dumps_json({
            "parameter": args.param,
            "widths": list(best.arch.widths),
            "activation": best.arch.activation,
            "param_count": best.param_count,
            "final_loss": best.final_loss,
            "tuning_cycles": len(cycles),
            "tuning_epochs": args.epochs,
        }),
    )
    print(f"selected depth={best.depth} width={best.width} params={best.param_count} loss={best.final_loss:.6g}")
    return 0


def cmd_train(args) -> int:
    out = Path(args.out_dir)
    arch_path = _need(args.arch or out / f"arch-{args.param}.json", "architecture file")
    meta = json.loads(arch_path.read_text(encoding="utf-8"))
    arch = Architecture(tuple(meta["widths"]), meta.get("activation", "relu"))
    if arch.d_in != args.length or arch.d_out != args.length:
        raise UsageError(f"architecture {arch.widths} does not match --length {args.length}")

    profiles = _profiles(_need(args.data, "--data"), args.soc_ref_mah)
    stats = ds.compute_stats(profiles, args.param)
    pairs = ds.build_pairs(profiles, args.param, args.length, stats)
    cfg = TrainConfig(epochs=args.epochs, learning_rate=args.lr, batch_size=args.batch_size, seed=args.seed)
    model, hist = train_coupled(arch, pairs, cfg)

    if args.val_data is not None:
        val = ds.build_pairs(_profiles(_need(args.val_data, "--val-data"), args.soc_ref_mah), args.param, args.length, stats)
    else:
        log.warning("no --val-data given; calibrating hop error on training pairs")
        val = pairs
    e = calibrate_hop_error(model, val)

    charge_file, discharge_file = f"chargenet-{args.param}.json", f"dischargenet-{args.param}.json"
    save_model(model.charge_net, out / charge_file)
    save_model(model.discharge_net, out / discharge_file)
    lines = ["epoch,to_charge_loss,to_discharge_loss"]
    lines += [f"{i},{c!r},{d!r}" for i, (c, d) in enumerate(zip(hist["to_charge"], hist["to_discharge"]), start=1)]
    atomic_write(out / f"loss-{args.param}.csv", "\n".join(lines) + "\n")
    atomic_write(
        out / f"coupled-{args.param}.json",
        dumps_json({
            "parameter": args.param,
            "length": args.length,
            "charge_model": charge_file,
            "discharge_model": discharge_file,
            "calibrated_hop_error": e,
            "calibration_source": "validation" if args.val_data is not None else "training",
            "soc_reference_mah": args.soc_ref_mah,
        }),
    )
    print(f"trained {args.param}: final loss to_charge={hist['to_charge'][-1]:.6g} "
          f"to_discharge={hist['to_discharge'][-1]:.6g}, hop error {e:.6g}")
    return 0


def cmd_generate(args) -> int:
    model = _load_coupled(args)
    profiles = _profiles(_need(args.data, "--data"), args.soc_ref_mah)
    cell = args.seed_cell or _first_cell(profiles)
    cycles = {k: v for k, v in ds.complete_cycles(profiles, args.param).items() if k[0] == cell}
    if not cycles:
        raise ds.DataError(f"no complete {args.param} cycles for cell {cell}")
    cycle = args.seed_cycle or max(c for _, c in cycles)
    if (cell, cycle) not in cycles:
        raise ds.DataError(f"cell {cell} has no complete cycle {cycle}")
    phases = cycles[(cell, cycle)]
    raw = phases[args.seed_phase].values
    pad_to = max(len(phases["charge"].values), len(phases["discharge"].values))
    seed = ds.prepare_profile(raw, model.length, model.stats, pad_to=pad_to)

    bounds = None
    if args.bounds:
        try:
            lo, hi = (float(v) for v in args.bounds.split(","))
        except ValueError:
            raise UsageError(f"--bounds must be LOW,HIGH, got {args.bounds!r}") from None
        bounds = Bounds(lo, hi)
    chain = generate_chain(model, seed, args.seed_phase, args.threshold, args.max_hops, bounds,
                           seed_cycle=cycle, cell_id=f"{cell}-synthetic")

    time_step = args.time_step
    if time_step is None:
        times = [s.time_s for s in ds.read_csv(args.data)
                 if s.cell_id == cell and s.cycle_index == cycle and s.phase == args.seed_phase]
        span = times[-1] - times[0] if len(times) > 1 else 0.0
        time_step = span / (model.length - 1) if span > 0 else 1.0

    out = Path(args.out_dir)
    text = export_chain(chain, model.stats, time_step_s=time_step, reference_mah=args.soc_ref_mah)
    atomic_write(out / f"synthetic-{args.param}.csv", text)
    meta = chain.metadata()
    meta["time_step_s"] = time_step
    atomic_write(out / f"chain-{args.param}.json", dumps_json(meta))
    print(f"generated {len(chain.hops)} hops ({len(chain.hops) // 2} full cycles), stop: {chain.stop_reason}")
    return 0


def cmd_eval(args) -> int:
    model = _load_coupled(args)
    profiles = _profiles(_need(args.data, "--data"), args.soc_ref_mah)
    pairs = ds.build_pairs(profiles, args.param, model.length, model.stats)
    reports = evaluate(model, pairs)
    out = Path(args.out_dir)
    summary = {"parameter": args.param, "units": UNITS[args.param], "directions": {}}
    for direction, rep in reports.items():
        atomic_write(out / f"metrics-{args.param}-{direction}.csv", rep.to_csv())
        entry = {"cycles": len(rep.per_cycle), "points_per_cycle": rep.n, "aggregate": rep.aggregate}
        if len(rep.per_cycle) >= 2:
            entry["trend"] = cycle_trend(rep)
        summary["directions"][direction] = entry
    atomic_write(out / f"metrics-{args.param}.json", dumps_json(summary))

    unit = UNITS[args.param]
    for direction, rep in reports.items():
        name = "ChargeNet" if direction == "to_charge" else "DischargeNet"
        a = rep.aggregate
        if args.drive_cycle:
            print(f"{name:12s} MAE {a['mae']:.4g} {unit}  RMSE {a['rmse']:.4g} {unit}")
        else:
            print(f"{name:12s} MSE {a['mse']:.4g}  MAE {a['mae']:.4g}  RMSE {a['rmse']:.4g} ({unit}, {len(rep.per_cycle)} cycles)")
    return 0


def overlay_svg(true, pred, title: str, width: int = 640, height: int = 360) -> str:
    """Static SVG line chart of truth vs prediction."""
    true = np.asarray(true, dtype=float)
    pred = np.asarray(pred, dtype=float)
    lo = float(min(true.min(), pred.min()))
    hi = float(max(true.max(), pred.max()))
    if hi == lo:
        hi = lo + 1.0
    m = 40
    n = len(true)

    def pts(v):
        xs = m + (width - 2 * m) * np.arange(n) / max(n - 1, 1)
        ys = height - m - (height - 2 * m) * (v - lo) / (hi - lo)
        return " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))

    return (
        '<?xml version="1.0" encoding="UTF-8"?>\n'
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">\n'
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>\n'
        f'<text x="{m}" y="24" font-family="sans-serif" font-size="14">{escape(title)}</text>\n'
        f'<line x1="{m}" y1="{height - m}" x2="{width - m}" y2="{height - m}" stroke="black"/>\n'
        f'<line x1="{m}" y1="{m}" x2="{m}" y2="{height - m}" stroke="black"/>\n'
        f'<text x="4" y="{m + 4}" font-family="sans-serif" font-size="10">{hi:.4g}</text>\n'
        f'<text x="4" y="{height - m}" font-family="sans-serif" font-size="10">{lo:.4g}</text>\n'
        f'<polyline fill="none" stroke="black" stroke-width="1.5" points="{pts(true)}"/>\n'
        f'<polyline fill="none" stroke="red" stroke-width="1.5" stroke-dasharray="4 2" points="{pts(pred)}"/>\n'
        f'<text x="{width - 150}" y="24" font-family="sans-serif" font-size="11">true (black), predicted (red)</text>\n'
        "</svg>\n"
    )


def cmd_plot(args) -> int:
    model = _load_coupled(args)
    profiles = _profiles(_need(args.data, "--data"), args.soc_ref_mah)
    cell = args.cell or _first_cell(profiles)
    pairs = ds.build_pairs([p for p in profiles if p.cell_id == cell], args.param, model.length, model.stats)
    match = [p for p in pairs.direction(args.direction) if p.target_cycle == args.cycle]
    if not match:
        raise ds.DataError(f"no {args.direction} pair with target cycle {args.cycle} for cell {cell}")
    p = match[0]
    true = ds.denormalize(p.target, model.stats)
    pred = ds.denormalize(forward(model.net(args.direction), p.input), model.stats)

    stem = Path(args.out_dir) / f"overlay-{args.param}-{args.direction}-{cell}-c{args.cycle}"
    rows = ["step,true,predicted"] + [f"{i},{float(t)!r},{float(q)!r}" for i, (t, q) in enumerate(zip(true, pred))]
    atomic_write(stem.with_suffix(".csv"), "\n".join(rows) + "\n")
    name = "ChargeNet" if args.direction == "to_charge" else "DischargeNet"
    title = f"{name} {args.param} ({UNITS[args.param]}), {cell} cycle {args.cycle}"
    atomic_write(stem.with_suffix(".svg"), overlay_svg(true, pred, title))
    print(f"max |true - predicted| = {np.max(np.abs(true - pred)):.4g} {UNITS[args.param]}")
    return 0


COMMANDS = {
    "fixture": cmd_fixture,
    "tune": cmd_tune,
    "train": cmd_train,
    "generate": cmd_generate,
    "eval": cmd_eval,
    "plot": cmd_plot,
}


def main(argv=None) -> int:
    level = os.environ.get("CYCLEGEN_LOG", "WARNING").upper()
    logging.basicConfig(
        level=level if isinstance(logging.getLevelName(level), int) else "WARNING",
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    try:
        args = resolve(parser, argv)
        return COMMANDS[args.command](args)
    except SystemExit as exc:
        # argparse usage errors exit with 2
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    except UsageError as exc:
        print(f"cyclegen: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDiverged as exc:
        print(f"cyclegen: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ds.DataError, OSError, ValueError, KeyError) as exc:
        print(f"cyclegen: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
