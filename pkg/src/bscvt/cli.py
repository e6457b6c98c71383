"""Command line interface: ``bscvt run | montecarlo | boundary``."""
from __future__ import annotations

import argparse
import logging
import os
import sys
from contextlib import nullcontext
from pathlib import Path
from typing import Dict, Optional

import numpy as np
from threadpoolctl import threadpool_limits

from . import io
from .cvt import SampleSet
from .estimators import ALGORITHMS, CVTDiagramSampler, MonteCarloSampler
from .exceptions import BSCVTError, ExtractionError
from .geometry import BoundingBox
from .pipeline import REFINE_METHODS, RegionRestriction, extract_boundary
from .validation import check_map

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3

logger = logging.getLogger("bscvt")


class UsageError(Exception):
    pass


RUN_DEFAULTS = {
    "map": "tracedet:2",
    "samples": "200",
    "box": "default",
    "eps": "1e-4",
    "q1": "50",
    "q2": "1500",
    "nref": "0",
    "refine": "spheres",
    "n_add": "4",
    "algorithm": "multigrid",
    "max_iter": "1000",
    "seed": "0",
    "restrict": "none",
    "out": ".",
}
MC_DEFAULTS = {"map": "tracedet:2", "n": "1000", "seed": "0", "out": "."}
BOUNDARY_DEFAULTS = {
    "input": "samples.csv",
    "map": "",
    "box": "",
    "min_angle": "12",
    "max_angle": "155",
    "max_edge_factor": "3",
    "out": "",
}


def merge_config(defaults: Dict[str, str], config_file: Optional[str], flags: Dict[str, object]) -> Dict[str, str]:
    """Defaults, then the ``key = value`` file, then explicit flags."""
    cfg = dict(defaults)
    if config_file:
        try:
            from_file = io.read_config(config_file)
        except OSError as exc:
            raise UsageError(f"cannot read config file: {exc}") from None
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        unknown = set(from_file) - set(defaults)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
        cfg.update(from_file)
    cfg.update({k: str(v) for k, v in flags.items() if v is not None and k in defaults})
    return cfg


def _num(cfg, key, kind=float, minimum=None):
    try:
        v = kind(cfg[key])
    except ValueError:
        raise UsageError(f"{key}: cannot parse {cfg[key]!r} as {kind.__name__}") from None
    if minimum is not None and v < minimum:
        raise UsageError(f"{key} must be >= {minimum}, got {v}")
    return v


def _box(text: str):
    t = text.strip().lower()
    if t in ("", "default", "none"):
        return None
    if t == "auto":
        return "auto"
    try:
        return BoundingBox.parse(text)
    except ValueError as exc:
        raise UsageError(f"box: {exc}") from None


def _map(name):
    try:
        return check_map(name)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _out_dir(path: str) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def build_run(cfg: Dict[str, str]) -> CVTDiagramSampler:
    """Validated sampler for a merged ``run`` configuration."""
    dmap = _map(cfg["map"])
    if cfg["refine"] not in REFINE_METHODS:
        raise UsageError(f"refine must be one of {REFINE_METHODS}")
    if cfg["algorithm"] not in ALGORITHMS:
        raise UsageError(f"algorithm must be one of {ALGORITHMS}")
    restrict = None
    if cfg["restrict"].strip().lower() not in ("", "none"):
        try:
            restrict = RegionRestriction.parse(cfg["restrict"])
        except ValueError as exc:
            raise UsageError(f"restrict: {exc}") from None
    eps = _num(cfg, "eps")
    if eps <= 0:
        raise UsageError("eps must be positive")
    return CVTDiagramSampler(
        map=dmap,
        n_samples=_num(cfg, "samples", int, 3),
        algorithm=cfg["algorithm"],
        box=_box(cfg["box"]),
        eps=eps,
        q1=_num(cfg, "q1", int, 0),
        q2=_num(cfg, "q2", int, 0),
        n_refinements=_num(cfg, "nref", int, 0),
        refine_method=cfg["refine"],
        n_add=_num(cfg, "n_add", int, 1),
        max_iter=_num(cfg, "max_iter", int, 1),
        restriction=restrict,
        random_state=_num(cfg, "seed", int, 0),
    )


def cmd_run(cfg: Dict[str, str]) -> int:
    est = build_run(cfg)
    out = _out_dir(cfg["out"])
    est.fit()
    io.write_samples(out / "samples.csv", est.samples_)
    io.write_images(out / "images.csv", est.images_)
    io.write_history(out / "history.csv", est.history_)
    (out / "cells.svg").write_text(io.cells_svg(est.images_, est.box_))
    resolved = dict(cfg)
    b = est.box_
    resolved["box"] = ",".join(io._fmt(v) for v in (b.xmin, b.xmax, b.ymin, b.ymax))
    resolved.pop("out")
    io.write_config(out / "config.txt", resolved)
    h = est.history_[-1]
    print(f"M={h['M']} H={h['H']:.10g} -> {out}")
    return EXIT_OK


def cmd_montecarlo(cfg: Dict[str, str]) -> int:
    dmap = _map(cfg["map"])
    n = _num(cfg, "n", int, 1)
    est = MonteCarloSampler(dmap, n, _num(cfg, "seed", int, 0)).fit()
    out = _out_dir(cfg["out"])
    io.write_images(out / "mc_images.csv", est.images_)
    io.write_samples(out / "mc_samples.csv", est.samples_)
    print(f"n={n} skipped={est.n_skipped_} -> {out}")
    return EXIT_OK


def cmd_boundary(cfg: Dict[str, str]) -> int:
    src = Path(cfg["input"])
    try:
        X = io.read_samples(src)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read samples: {exc}") from None
    if len(X) < 3:
        raise UsageError(f"{src}: need at least 3 samples, got {len(X)}")
    saved = {}
    run_cfg = src.parent / "config.txt"
    if run_cfg.exists():
        saved = io.read_config(run_cfg)
    map_name = cfg["map"] or saved.get("map")
    if not map_name:
        raise UsageError("--map is required when the input has no config.txt next to it")
    dmap = _map(map_name)
    if X.shape[1] != dmap.n_params:
        raise UsageError(f"{src}: {X.shape[1]} columns but {map_name} takes {dmap.n_params} parameters")
    Y = dmap.evaluate(X)
    box = _box(cfg["box"] or saved.get("box", ""))
    if not isinstance(box, BoundingBox):
        box = dmap.default_box.union(BoundingBox.from_points(Y, 0.25))
    lo, hi = _num(cfg, "min_angle"), _num(cfg, "max_angle")
    mef = cfg["max_edge_factor"].strip().lower()
    max_edge = None if mef in ("none", "inf", "0") else _num(cfg, "max_edge_factor")
    res = extract_boundary(SampleSet(X, Y, box), lo, hi, max_edge)
    out = _out_dir(cfg["out"] or str(src.parent))
    io.write_polygons(out / "boundary.csv", res.polygons)
    (out / "boundary.svg").write_text(io.boundary_svg(res.polygons, Y, box, res.flagged))
    print(f"loops={len(res.polygons)} area={res.area:.10g} flagged={len(res.flagged)} -> {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bscvt", description="Image of a planar map via centroidal Voronoi sampling.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="optimise samples (multigrid, Lloyd or variational)")
    r.add_argument("--map")
    r.add_argument("--samples", type=int)
    r.add_argument("--box", help="xmin,xmax,ymin,ymax or 'auto'")
    r.add_argument("--eps", type=float)
    r.add_argument("--q1", type=int)
    r.add_argument("--q2", type=int)
    r.add_argument("--nref", type=int)
    r.add_argument("--refine", choices=REFINE_METHODS)
    r.add_argument("--n-add", dest="n_add", type=int)
    r.add_argument("--algorithm", choices=ALGORITHMS)
    r.add_argument("--max-iter", dest="max_iter", type=int)
    r.add_argument("--seed", type=int)
    r.add_argument("--restrict", help="cx,cy,r")
    r.add_argument("--out")
    r.add_argument("--config")

    m = sub.add_parser("montecarlo", help="images of uniform random samples")
    m.add_argument("--map")
    m.add_argument("--n", type=int)
    m.add_argument("--seed", type=int)
    m.add_argument("--out")
    m.add_argument("--config")

    b = sub.add_parser("boundary", help="extract the outer boundary from samples.csv")
    b.add_argument("--input")
    b.add_argument("--map")
    b.add_argument("--box")
    b.add_argument("--min-angle", dest="min_angle", type=float)
    b.add_argument("--max-angle", dest="max_angle", type=float)
    b.add_argument("--max-edge-factor", dest="max_edge_factor")
    b.add_argument("--out")
    b.add_argument("--config")
    return p


COMMANDS = {
    "run": (cmd_run, RUN_DEFAULTS),
    "montecarlo": (cmd_montecarlo, MC_DEFAULTS),
    "boundary": (cmd_boundary, BOUNDARY_DEFAULTS),
}


def _thread_limit():
    raw = os.environ.get("BSCVT_THREADS")
    if not raw:
        return nullcontext()
    try:
        n = int(raw)
        if n < 1:
            raise ValueError
    except ValueError:
        raise UsageError(f"BSCVT_THREADS must be a positive integer, got {raw!r}") from None
    return threadpool_limits(limits=n)


VALUE_FLAGS = ("--box", "--restrict")


def _join_values(argv):
    """``--box -2.5,...`` would read as an option; rewrite it to ``--box=-2.5,...``."""
    out, it = [], iter(argv)
    for a in it:
        if a in VALUE_FLAGS:
            nxt = next(it, None)
            out.append(a if nxt is None else f"{a}={nxt}")
        else:
            out.append(a)
    return out


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(_join_values(argv))
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    func, defaults = COMMANDS[args.command]
    try:
        cfg = merge_config(defaults, args.config, vars(args))
        with _thread_limit():
            return func(cfg)
    except UsageError as exc:
        print(f"bscvt {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ExtractionError as exc:
        print(f"bscvt {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (BSCVTError, RuntimeError, ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"bscvt {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
