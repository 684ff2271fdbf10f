"""``simparts`` command line: fit, corrupt, complete, eval, synth, export.

Exit codes: 0 success, 1 numerical failure (every restart diverged),
2 usage or I/O error.  ``--seed`` defaults to $SIMPARTS_SEED, else 0.
Fit settings resolve as flags > --config file > --preset > defaults.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import io
from .complete import Corruption, completion_s
from .fit import FitConfig, FitDivergedError, fit
from .geometry import sq_sample_surface
from .losses import LossWeights, PRESETS, preset
from .metrics import cov, distance_table, jsd, mmd
from .model import assemble, freeze_assignment
from .synth import SynthSpec, Template, generate

log = logging.getLogger("simparts")

SEED_ENV = "SIMPARTS_SEED"
EXIT_OK, EXIT_NUMERIC, EXIT_USAGE = 0, 1, 2

_WEIGHT_FLAGS = ("w_o", "w_d", "w_a", "s", "c1")
_FIT_FLAGS = ("stage1_iters", "stage2_iters", "step_size", "step_size2", "logit_step_size",
              "pose_step_size2", "final_lr_fraction2", "logit_prior", "restarts",
              "n_points_per_part", "n_surface", "tau")
_INT_FLAGS = ("stage1_iters", "stage2_iters", "restarts", "n_points_per_part", "n_surface")


class UsageError(Exception):
    pass


def _default_seed() -> int:
    v = os.environ.get(SEED_ENV)
    if v is None:
        return 0
    try:
        return int(v)
    except ValueError:
        raise UsageError(f"${SEED_ENV} must be an integer, got {v!r}") from None


def _need_file(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"no such file: {p}")
    return p


def _need_dir(path) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise UsageError(f"no such directory: {p}")
    return p


# ---------------------------------------------------------------------------
# fit configuration


def resolve_fit_config(args) -> FitConfig:
    """Defaults, then preset, then config file, then explicit flags."""
    weights = dataclasses.asdict(LossWeights())
    fields = {}
    if getattr(args, "preset", None):
        weights.update(dataclasses.asdict(preset(args.preset)))
    if getattr(args, "config", None):
        doc = json.loads(_need_file(args.config).read_text())
        if "preset" in doc and not getattr(args, "preset", None):
            weights.update(dataclasses.asdict(preset(doc["preset"])))
        weights.update(doc.get("weights", {}))
        unknown = set(doc) - {"preset", "weights", *_FIT_FLAGS}
        if unknown:
            raise UsageError(f"{args.config}: unknown config keys {sorted(unknown)}")
        fields.update({k: doc[k] for k in _FIT_FLAGS if k in doc})
    for k in _WEIGHT_FLAGS:
        v = getattr(args, k, None)
        if v is not None:
            weights[k] = v
    for k in _FIT_FLAGS:
        v = getattr(args, k, None)
        if v is not None:
            fields[k] = v
    return FitConfig(weights=LossWeights(**weights), seed=args.seed, **fields)


def _add_fit_flags(p):
    p.add_argument("--shapes", "-s", dest="M_s", type=int, default=2, help="number of shapes M_s")
    p.add_argument("--parts", "-t", dest="M_T", type=int, default=5, help="number of parts M_T")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--config", help="JSON file with fit settings and a 'weights' object")
    for k in _WEIGHT_FLAGS:
        p.add_argument(f"--{k.replace('_', '-')}", dest=k, type=float)
    for k in _FIT_FLAGS:
        typ = int if k in _INT_FLAGS else float
        p.add_argument(f"--{k.replace('_', '-')}", dest=k, type=typ)


def _run_fit(X, args):
    cfg = resolve_fit_config(args)
    res = fit(X, args.M_s, args.M_T, cfg)
    return cfg, res


def _write_fit_report(path, args, cfg, res, n_points):
    hot = freeze_assignment(res.model).hot.tolist()
    report = {
        "command": "fit", "argv": sys.argv[1:], "seed": cfg.seed,
        "M_s": args.M_s, "M_T": args.M_T, "n_points": n_points,
        "config": dataclasses.asdict(cfg),
        "finals": [None if not np.isfinite(v) else v for v in res.finals],
        "best_restart": res.best_restart, "hot": hot, "seconds": res.seconds,
        "final_terms": res.trace[-1].terms if res.trace else {},
    }
    Path(path).write_text(json.dumps(report, indent=1) + "\n")


# ---------------------------------------------------------------------------
# commands


def cmd_fit(args) -> int:
    cloud = io.read_cloud(_need_file(args.input))
    cfg, res = _run_fit(cloud.points, args)
    io.write_model(args.out, res.model)
    report = args.report or str(Path(args.out).with_suffix(".report.json"))
    _write_fit_report(report, args, cfg, res, len(cloud.points))
    if args.trace:
        Path(args.trace).write_text(res.trace_table())
    print(f"fitted {args.M_T} parts / {args.M_s} shapes in {res.seconds:.1f}s; "
          f"best restart {res.best_restart}, objective {res.finals[res.best_restart]:.6g}")
    return EXIT_OK


def cmd_corrupt(args) -> int:
    cloud = io.read_cloud(_need_file(args.input))
    if cloud.labels is None:
        raise UsageError(f"{args.input}: corruption needs per-point part labels")
    corr = Corruption(args.kind, args.part, args.K, args.seed)
    X_inc, lab_inc, removed = corr.apply(cloud.points, cloud.labels)
    io.write_cloud(args.out, X_inc, lab_inc,
                   [f" {args.kind} part={args.part} K={args.K} seed={args.seed}"])
    removed_path = args.removed or str(Path(args.out).with_suffix(".removed.txt"))
    io.write_indices(removed_path, removed)
    print(f"removed {len(removed)} points from part {args.part}; {len(X_inc)} remain")
    return EXIT_OK


def cmd_complete(args) -> int:
    cloud = io.read_cloud(_need_file(args.input))
    if args.model:
        model = io.read_model(_need_file(args.model))
    else:
        _, res = _run_fit(cloud.points, args)
        model = res.model
        if args.save_model:
            io.write_model(args.save_model, model)
    if args.mode == "R":
        asm = assemble(model)
        Y = asm.Y
        io.write_cloud(args.out, Y, asm.part_of)
    else:
        Y = completion_s(cloud.points, model)
        io.write_cloud(args.out, Y)
    print(f"completion-{args.mode}: {len(cloud.points)} -> {len(Y)} points")
    return EXIT_OK


def _load_dir(d):
    files = sorted(_need_dir(d).glob("*.txt"))
    if not files:
        raise UsageError(f"no .txt clouds in {d}")
    return [io.read_cloud(f).points for f in files]


def cmd_eval(args) -> int:
    A, B = _load_dir(args.set_a), _load_dir(args.set_b)
    rows, tables = [], {}
    for name in args.metrics.split(","):
        name = name.strip().lower()
        if name == "jsd":
            rows.append(("jsd", f"grid{args.grid_res}",
                         jsd(A, B, args.grid_res, (args.bounds[0], args.bounds[1]))))
            continue
        try:
            metric, d = name.split("-")
        except ValueError:
            raise UsageError(f"unknown metric {name!r}") from None
        if metric not in ("mmd", "cov") or d not in ("cd", "emd"):
            raise UsageError(f"unknown metric {name!r}")
        if d not in tables:
            tables[d] = distance_table(A, B, d)
        f = mmd if metric == "mmd" else cov
        rows.append((metric, d, f(A, B, table=tables[d])))
    text = io.format_report(rows)
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = SynthSpec(Template(args.template), args.sigma, args.points_per_part, args.seed)
    X, labels, truth = generate(spec)
    io.write_cloud(args.out, X, labels, [f" {spec.template.value} sigma={args.sigma!r} "
                                         f"seed={args.seed}"])
    truth_path = args.truth or str(Path(args.out).with_suffix(".truth.json"))
    io.write_model(truth_path, truth)
    print(f"{spec.template.value}: {len(X)} points in {truth.M_T} parts")
    return EXIT_OK


def cmd_export(args) -> int:
    model = io.read_model(_need_file(args.model))
    if args.what == "points":
        asm = assemble(model)
        pts, part = asm.Y, asm.part_of
    else:
        rng = np.random.default_rng(args.seed) if args.jitter else None
        asm = assemble(model)
        blocks = []
        for prim, T in asm.primitives:
            blocks.append(T.apply(sq_sample_surface(prim, args.n_surface, rng)))
        pts = np.concatenate(blocks)
        part = np.repeat(np.arange(model.M_T), args.n_surface)
    io.write_points(args.out, pts, part)
    print(f"wrote {len(pts)} {args.what} samples for {model.M_T} parts to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help=f"random seed (default ${SEED_ENV} or 0)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="simparts", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", parents=[common], help="fit a parts model to a point cloud")
    f.add_argument("input")
    f.add_argument("--out", "-o", required=True, help="model document (.json)")
    f.add_argument("--report", help="run report (default: <out>.report.json)")
    f.add_argument("--trace", help="per-iteration loss table")
    _add_fit_flags(f)
    f.set_defaults(func=cmd_fit)

    c = sub.add_parser("corrupt", parents=[common], help="cut or punch a hole in one part")
    c.add_argument("input", help="labelled cloud")
    c.add_argument("--kind", choices=("cut", "hole"), default="cut")
    c.add_argument("--part", type=int, required=True)
    c.add_argument("-K", "--K", type=int, required=True)
    c.add_argument("--out", "-o", required=True)
    c.add_argument("--removed", help="removed-index file (default: <out>.removed.txt)")
    c.set_defaults(func=cmd_corrupt)

    m = sub.add_parser("complete", parents=[common], help="complete a cloud (R or S mode)")
    m.add_argument("input")
    m.add_argument("--mode", choices=("R", "S"), default="S")
    m.add_argument("--model", help="fitted model; fitted on the input when omitted")
    m.add_argument("--save-model", help="write the model fitted on the input")
    m.add_argument("--out", "-o", required=True)
    _add_fit_flags(m)
    m.set_defaults(func=cmd_complete)

    e = sub.add_parser("eval", parents=[common], help="set metrics between two directories")
    e.add_argument("set_a", help="reference clouds (.txt)")
    e.add_argument("set_b", help="generated clouds (.txt)")
    e.add_argument("--metrics", default="jsd,mmd-cd,cov-cd")
    e.add_argument("--grid-res", type=int, default=28)
    e.add_argument("--bounds", type=float, nargs=2, default=(-0.5, 0.5), metavar=("LO", "HI"))
    e.add_argument("--out", "-o")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("synth", parents=[common], help="generate a labelled synthetic object")
    s.add_argument("--template", choices=[t.value for t in Template], default="Table4Leg")
    s.add_argument("--sigma", type=float, default=0.0)
    s.add_argument("--points-per-part", type=int, default=512)
    s.add_argument("--out", "-o", required=True)
    s.add_argument("--truth", help="truth model (default: <out>.truth.json)")
    s.set_defaults(func=cmd_synth)

    x = sub.add_parser("export", parents=[common], help="export surface samples for viewers")
    x.add_argument("model")
    x.add_argument("--what", choices=("points", "primitives"), default="points")
    x.add_argument("--n-surface", type=int, default=1024)
    x.add_argument("--jitter", action="store_true", help="jitter primitive samples (uses --seed)")
    x.add_argument("--out", "-o", required=True, help=".ply or plain cloud path")
    x.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.seed is None:
            args.seed = _default_seed()
        return args.func(args)
    except FitDivergedError as exc:
        print(f"simparts: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, ValueError, OSError) as exc:
        print(f"simparts: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
