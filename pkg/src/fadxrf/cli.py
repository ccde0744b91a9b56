"""Command-line entry point: ``fadxrf {simulate,detect,deconvolve,export,pipeline}``.

Exit codes: 0 success, 1 usage or configuration error, 2 data or file
error, 3 solver divergence.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .assignment import detect_elements
from .core import load_line_table
from .detection import WindowConfig
from .exceptions import (ConfigError, DataError, DictionaryError, DimensionError, DomainError,
                         RangeError, SolverDivergenceError)
from .io import RunReport, atomic_write_text, export_maps, load_maps, read_cube, save_maps, write_cube
from .solvers import SOLVERS, SolverConfig, build_pulse_matrix, solve
from .synthetic import PRESETS, preset, render_cube

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3
EXPORT_FORMATS = ("pgm16", "csv", "f32raw")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _add_detection_flags(p):
    p.add_argument("--amp-floor", type=float, default=0.0, help="absolute pulse amplitude floor (counts)")
    p.add_argument("--noise-factor", type=float, default=3.0, help="pulse threshold in noise units")


def _add_solver_flags(p):
    p.add_argument("--solver", choices=sorted(SOLVERS), default="fista")
    p.add_argument("--lambda", dest="lam", type=float, default=0.1, help="TV weight")
    p.add_argument("--iters", type=int, default=50)
    p.add_argument("--rho1", type=float, default=1.0)
    p.add_argument("--rho2", type=float, default=1.0)
    p.add_argument("--rho3", type=float, default=1.0)
    p.add_argument("--rho", type=float, default=1.0, help="data weight of the FISTA stacked system")
    p.add_argument("--alpha", type=float, default=None, help="FISTA inverse step (default: estimated)")
    p.add_argument("--tol", type=float, default=None, help="stop when the relative change drops below this")
    p.add_argument("--no-physical", action="store_true", help="disable the K/L line ratio caps")
    p.add_argument("--trace", type=Path, default=None, help="write the per-iteration trace as CSV")


def _add_scene_flags(p):
    p.add_argument("--preset", choices=sorted(PRESETS), default="shapes")
    p.add_argument("--height", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--channels", type=int)
    p.add_argument("--noise", choices=("none", "poisson"))
    p.add_argument("--seed", type=int, help="Poisson seed (overrides the preset's)")


def build_parser():
    parser = _Parser(prog="fadxrf", description="Fast automatic deconvolution of MA-XRF datacubes.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="render a synthetic cube and its ground truth")
    _add_scene_flags(p)
    p.add_argument("--out", type=Path, required=True, help="cube payload path (header goes to OUT.json)")
    p.add_argument("--dtype", choices=("f32", "u16"), default="f32")
    p.add_argument("--truth", type=Path, help="ground-truth maps (default OUT.truth.npz)")

    p = sub.add_parser("detect", help="detect elements and write the detection JSON")
    p.add_argument("cube", type=Path)
    p.add_argument("--out", type=Path, required=True)
    _add_detection_flags(p)

    p = sub.add_parser("deconvolve", help="solve for element-line maps")
    p.add_argument("cube", type=Path)
    p.add_argument("--elements", help="comma-separated element list (skips detection)")
    p.add_argument("--maps", type=Path, required=True, help="output maps archive (.npz)")
    p.add_argument("--report", type=Path, help="RunReport JSON (default MAPS.report.json)")
    _add_detection_flags(p)
    _add_solver_flags(p)

    p = sub.add_parser("export", help="write maps as images or raw files")
    p.add_argument("maps", type=Path)
    p.add_argument("--dir", type=Path, required=True)
    p.add_argument("--format", choices=EXPORT_FORMATS, default="pgm16")

    p = sub.add_parser("pipeline", help="simulate (or read) a cube, detect, deconvolve and export")
    _add_scene_flags(p)
    p.add_argument("--cube", type=Path, help="use an existing cube instead of a preset")
    p.add_argument("--outdir", type=Path, default=Path("fadxrf_out"))
    p.add_argument("--format", choices=EXPORT_FORMATS, default="pgm16")
    _add_detection_flags(p)
    _add_solver_flags(p)
    return parser


def _scene(args):
    overrides = {k: getattr(args, k) for k in ("height", "width", "channels", "noise", "seed")
                 if getattr(args, k) is not None}
    return preset(args.preset, **overrides)


def _window_cfg(args):
    return WindowConfig(amp_floor=args.amp_floor, noise_factor=args.noise_factor)


def _solver_cfg(args):
    return SolverConfig(lam=args.lam, rho1=args.rho1, rho2=args.rho2, rho3=args.rho3, rho=args.rho,
                        iters=args.iters, alpha=args.alpha, physical_constraint=not args.no_physical,
                        tol=args.tol)


def _load_cube(path):
    if not Path(path).exists():
        raise FileNotFoundError(f"cube not found: {path}")
    return read_cube(path)


def _cube_info(cube, path):
    h, w = cube.spatial_shape
    return {"path": str(path), "height": h, "width": w, "channels": cube.calibration.channels,
            **cube.calibration.to_dict()}


def _deconvolve(cube, cube_path, args, maps_path, report_path, elements=None):
    table = load_line_table(cube.calibration)
    if elements:
        detection = {"elements": list(elements), "source": "user"}
        chosen = list(elements)
    else:
        found = detect_elements(cube, _window_cfg(args), table)
        detection = found.to_dict()
        chosen = found
    S = build_pulse_matrix(chosen, table, cube.calibration)
    cfg = _solver_cfg(args)
    maps, trace = solve(cube, S, args.solver, cfg)
    save_maps(maps, maps_path)
    if args.trace is not None:
        trace.to_csv(args.trace)
    report = RunReport(detection=detection, solver={"name": args.solver, **cfg.to_dict()},
                       trace=trace.summary(), cube=_cube_info(cube, cube_path), maps=maps.keys)
    report.save(report_path)
    return maps, report


def cmd_simulate(args):
    scene = _scene(args)
    cube, truth = render_cube(scene)
    write_cube(cube, args.out, dtype=args.dtype)
    truth_path = args.truth or Path(f"{args.out}.truth.npz")
    save_maps(truth, truth_path)
    print(f"wrote {args.out} ({cube.shape[1]}x{cube.shape[2]}x{cube.shape[0]}) and {truth_path}")


def cmd_detect(args):
    cube = _load_cube(args.cube)
    found = detect_elements(cube, _window_cfg(args))
    atomic_write_text(args.out, json.dumps(found.to_dict(), indent=2) + "\n")
    print("detected: " + (", ".join(found.elements) or "(none)"))


def cmd_deconvolve(args):
    cube = _load_cube(args.cube)
    elements = [e.strip() for e in args.elements.split(",") if e.strip()] if args.elements else None
    report_path = args.report or Path(f"{args.maps}.report.json")
    _, report = _deconvolve(cube, args.cube, args, args.maps, report_path, elements)
    t = report.trace
    print(f"{args.solver}: {t['iterations']} iterations, final MSE {t['final_mse']}, "
          f"{t['total_wall_ms']:.1f} ms; wrote {args.maps} and {report_path}")


def cmd_export(args):
    maps = load_maps(args.maps)
    files = export_maps(maps, args.dir, args.format)
    print(f"wrote {len(files)} files to {args.dir}")


def cmd_pipeline(args):
    out = args.outdir
    out.mkdir(parents=True, exist_ok=True)
    if args.cube is not None:
        cube_path = args.cube
        cube = _load_cube(cube_path)
    else:
        cube, truth = render_cube(_scene(args))
        cube_path = out / "cube.raw"
        write_cube(cube, cube_path)
        save_maps(truth, out / "truth.npz")
    if args.trace is None:
        args.trace = out / "trace.csv"
    maps, report = _deconvolve(cube, cube_path, args, out / "maps.npz", out / "report.json")
    atomic_write_text(out / "detection.json", json.dumps(report.detection, indent=2) + "\n")
    files = export_maps(maps, out / "maps", args.format)
    print(f"detected: {', '.join(report.detection['elements'])}; {len(files)} map files in {out / 'maps'}")


COMMANDS = {"simulate": cmd_simulate, "detect": cmd_detect, "deconvolve": cmd_deconvolve,
            "export": cmd_export, "pipeline": cmd_pipeline}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        COMMANDS[args.command](args)
    except SystemExit as exc:  # --help
        return exc.code if isinstance(exc.code, int) else EXIT_OK
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SolverDivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, RangeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, DimensionError, DictionaryError, DomainError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
