"""Command-line front end: ``voidfwi {forward,observe,gradient,invert,export}``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from . import __version__
from .assembly import AssemblyError
from .config import ConfigError, list_presets, load_config, preset_path
from .experiments import (ExperimentError, ObservationSet, generate_observations, make_shape,
                          run_forward_study, run_gradient_study, run_inversion_experiment)
from .io import (FieldFileError, export_field, fmt, load_recordings, save_recordings, write_field,
                 write_manifest, write_recording_csv)
from .optimize import OptimizeError
from .propagate import PropagationError

log = logging.getLogger("voidfwi")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    def __init__(self, message, usage: str = ""):
        super().__init__(message)
        self.usage = usage


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="voidfwi", description="Void reconstruction by scaled-parameter full waveform inversion.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    helps = {
        "forward": "forward study (1D interface or 2D plate) with error report",
        "observe": "synthetic full-matrix-capture observations of the reference model",
        "gradient": "normalized gradients at an idealized intermediate state",
        "invert": "bounded L-BFGS inversion with convergence trace and snapshots",
        "export": "convert a nodal field file to csv_grid or vtk_legacy_ascii",
    }
    parser.subcommands = {}
    for name, text in helps.items():
        p = sub.add_parser(name, help=text, description=text)
        parser.subcommands[name] = p
        src = p.add_mutually_exclusive_group()
        src.add_argument("--config", metavar="PATH", help="experiment config file")
        src.add_argument("--preset", metavar="NAME",
                         help=f"shipped preset ({', '.join(list_presets())})")
        p.add_argument("--out", metavar="DIR", default="out", help="output directory (default: ./out)")
        p.add_argument("--threads", metavar="N", type=int, default=1,
                       help="source batches processed concurrently (default: 1)")
        p.add_argument("--set", metavar="KEY=VALUE", action="append", default=[], dest="overrides",
                       help="override a config entry, e.g. time.stride=5 (repeatable)")
        p.add_argument("-v", "--verbose", action="store_true", help="log progress")
        if name in ("invert", "gradient"):
            p.add_argument("--observations", metavar="NPZ",
                           help="reuse observations written by 'observe' instead of simulating them")
        if name == "export":
            p.add_argument("--field", metavar="PATH", help="field file (overrides export.field)")
            p.add_argument("--format", choices=("csv_grid", "vtk_legacy_ascii"),
                           help="export format (overrides export.format)")
    return parser


def _load(args):
    if args.config is None and args.preset is None:
        raise UsageError("one of --config or --preset is required")
    path = preset_path(args.preset) if args.preset else Path(args.config)
    if args.config is not None and not path.exists():
        raise UsageError(f"config file not found: {path}")
    return load_config(path, args.overrides)


def _observations(args, cfg):
    if getattr(args, "observations", None):
        recs, meta = load_recordings(args.observations)
        return ObservationSet(recs, meta)
    return generate_observations(cfg, args.threads)


def cmd_forward(args, cfg, out: Path) -> list:
    results = run_forward_study(cfg)
    written = []
    rows = []
    for res in results:
        for t, u in zip(res.times, res.snapshots):
            written.append(write_field(out / f"{res.tag}_t{t:.6g}.field", res.grid, u, "u"))
        for t, err in sorted(res.errors.items()):
            rows.append([res.tag, res.extra.get("degree", ""), fmt(t), fmt(err),
                         fmt(res.extra.get("void_max_after_reflection", float("nan")))])
    report = out / "errors.csv"
    with open(report, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tag", "degree", "time_s", "relative_l2_error", "void_max_after_reflection"])
        w.writerows(rows)
    written.append(report)
    for r in rows:
        print(f"{r[0]:>8} p={r[1]} t={float(r[2]):<10.4g} error={float(r[3]):.4e}")
    return written


def cmd_observe(args, cfg, out: Path) -> list:
    obs = generate_observations(cfg, args.threads)
    written = [save_recordings(out / "observations.npz", obs.recordings, obs.metadata)]
    rec_dir = out / "recordings"
    rec_dir.mkdir(exist_ok=True)
    for rec in obs.recordings:
        written.append(write_recording_csv(rec_dir / f"source_{rec.source_index:03d}.csv", rec))
    print(f"{len(obs.recordings)} source experiments, {obs.recordings[0].samples.shape[0]} samples each")
    return written


def _field_names(tag: str) -> list:
    return ["gamma_rho", "gamma_c"] if tag == "separate" else ["gamma"]


def cmd_gradient(args, cfg, out: Path) -> list:
    obs = _observations(args, cfg)
    results = run_gradient_study(cfg, obs, args.threads)
    void = make_shape(cfg["geometry.void"])
    written = []
    for tag, (grad, setup) in results.items():
        for name, values in zip(_field_names(tag), grad.values):
            written.append(write_field(out / f"gradient_{tag}_{name}.field", setup.grid, values,
                                       f"grad_{name}"))
            if void is not None:
                inside = void.contains(setup.grid.coords)
                print(f"{tag:>8} {name:<9} mean normalized gradient inside void: "
                      f"{values[inside].mean():+.4f}")
    return written


def cmd_invert(args, cfg, out: Path) -> list:
    obs = _observations(args, cfg)
    written = []
    snap_dir = out / "snapshots"
    snap_dir.mkdir(exist_ok=True)

    def report(state):
        print(f"iteration {state.iteration:3d}  normalized objective {state.normalized[-1]:.6e}", flush=True)

    res = run_inversion_experiment(cfg, obs, args.threads, on_iteration=report)
    names = _field_names(cfg["material.tag"])
    for it, fields in sorted(res.snapshots.items()):
        for name, values in zip(names, fields):
            written.append(write_field(snap_dir / f"{name}_iter{it:03d}.field", res.setup.grid, values, name))
    n = res.setup.grid.n_nodes
    for i, name in enumerate(names):
        written.append(write_field(out / f"{name}_final.field", res.setup.grid,
                                   res.state.x[i * n:(i + 1) * n], name))
    trace = out / "convergence.csv"
    res.state.write_csv(trace)
    written.append(trace)
    print(f"stopped after {res.state.iteration} iterations: {res.state.message}")
    return written


def cmd_export(args, cfg, out: Path) -> list:
    field = args.field or cfg["export.field"]
    if not field:
        raise UsageError("no field file given (use --field or export.field)")
    fmt_name = args.format or cfg["export.format"]
    ext = ".csv" if fmt_name == "csv_grid" else ".vtk"
    target = out / (Path(field).stem + ext)
    return [export_field(field, fmt_name, target)]


COMMANDS = {"forward": cmd_forward, "observe": cmd_observe, "gradient": cmd_gradient,
            "invert": cmd_invert, "export": cmd_export}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            raise UsageError("a command is required")
        if args.threads < 1:
            raise UsageError("--threads must be at least 1")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        try:
            cfg = _load(args)
        except UsageError as exc:
            raise UsageError(str(exc), parser.subcommands[args.command].format_usage()) from None
        out = Path(args.out)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise UsageError(f"cannot create output directory {out}: {exc.strerror}") from None
        written = COMMANDS[args.command](args, cfg, out)
        (out / "config.resolved.cfg").write_text(cfg.as_text())
        written.append(out / "config.resolved.cfg")
        write_manifest(out, written, {"command": args.command, "version": __version__})
        return EXIT_OK
    except UsageError as exc:
        if exc.usage:
            print(exc.usage, end="", file=sys.stderr)
        print(f"voidfwi: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"voidfwi: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PropagationError, AssemblyError, OptimizeError, ExperimentError, FieldFileError,
            FloatingPointError) as exc:
        print(f"voidfwi: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
