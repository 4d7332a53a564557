"""Command-line interface: ``mvpose {triangulate,synth,eval,bench,heatmap}``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 every solve failed.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .camera import BoundingBox, load_calibration
from .density import (
    GaussianDensity,
    KeypointObservation,
    LaplaceDensity,
    load_density_model,
    render_density_grid,
    write_pgm,
)
from .errors import ConfigError, MVPoseError, ParseError
from .io import load_keypoint_stream, load_pose_file, save_pose_file
from .metrics import PoseSequence3D, metric_report

log = logging.getLogger("mvpose")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_SOLVE = 0, 2, 3, 4


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    calibration: Path
    keypoints: Path
    output: Path
    compiler_keypoints: Path | None = None
    density: Path | None = None
    compiler_density: Path | None = None
    solver: str = "mle"
    tolerance_mm: float = 1e-3
    max_iterations: int = 100
    init: str = "dlt"
    window: int = 1  # temporal window length; metadata only at solve time
    seed: int = 0
    threads: int = 1
    trace: Path | None = None
    report: Path | None = None
    ransac_threshold_px: float = 5.0
    grid: dict = field(default_factory=lambda: {"half_extent_mm": 50.0, "coarse_step_mm": 2.0, "fine_step_mm": 0.01})

    def validate(self):
        for name in ("calibration", "keypoints", "compiler_keypoints", "density", "compiler_density"):
            p = getattr(self, name)
            if p is not None and not Path(p).exists():
                raise ParseError(f"{name}: file not found: {p}")
        if self.window < 1:
            raise ConfigError("window", "must be >= 1")
        if self.threads < 1:
            raise ConfigError("threads", "must be >= 1")


def _load_density(path):
    return GaussianDensity() if path is None else load_density_model(path)


def _solve_one(task, cfg: RunConfig, solver_cfg):
    from .errors import MVPoseError as _E
    from .triangulation import dlt, grid_search_oracle, mle_refine, ransac_triangulate

    t, k, vobs = task
    trace = [] if cfg.trace else None
    try:
        pix = [(o.camera, o.image_branch.mu) for o in vobs]
        if cfg.solver == "dlt":
            pt = dlt(pix)
        elif cfg.solver == "ransac":
            pt = ransac_triangulate(pix, 20, cfg.ransac_threshold_px, [cfg.seed, t, k])
        elif cfg.solver == "grid":
            center = dlt(pix).xyz
            pt = grid_search_oracle(vobs, center, **cfg.grid)
        else:
            pt = mle_refine(vobs, solver_cfg, trace=trace)
        return pt, None, trace
    except _E as e:
        return None, f"{type(e).__name__}: {e}", trace


def cmd_triangulate(cfg: RunConfig, out=None) -> int:
    from .triangulation import SolverConfig, ViewObservation, write_trace

    cfg.validate()
    cams = {c.id: c for c in load_calibration(cfg.calibration)}
    stream = load_keypoint_stream(cfg.keypoints)
    comp = load_keypoint_stream(cfg.compiler_keypoints) if cfg.compiler_keypoints else None
    img_model = _load_density(cfg.density)
    comp_model = _load_density(cfg.compiler_density)
    missing = [v for v in stream.views if v not in cams]
    if missing:
        raise ParseError(f"keypoint stream references unknown cameras: {missing}")
    solver_cfg = SolverConfig(cfg.tolerance_mm, cfg.max_iterations, 10, cfg.init)

    T, V, J = stream.valid.shape
    tasks, flags = [], [["ok"] * J for _ in range(T)]
    notes = []
    for ti, t in enumerate(stream.frames):
        for k in range(J):
            vobs = []
            absent = []
            for vi, vid in enumerate(stream.views):
                if not stream.valid[ti, vi, k]:
                    absent.append(vid)
                    continue
                img = KeypointObservation(stream.uv[ti, vi, k], stream.sigma[ti, vi, k], img_model)
                cb = None
                if comp is not None and t in comp.frames and vid in comp.views:
                    ci, cv = comp.frames.index(t), comp.views.index(vid)
                    if comp.valid[ci, cv, k]:
                        cb = KeypointObservation(comp.uv[ci, cv, k], comp.sigma[ci, cv, k], comp_model)
                vobs.append(ViewObservation(cams[vid], img, cb))
            if absent:
                flags[ti][k] = "partial"
                notes.append({"t": t, "joint": k, "missing_views": absent})
            tasks.append((ti, k, vobs))

    start = time.perf_counter()
    work = [(stream.frames[ti], k, vobs) for ti, k, vobs in tasks]
    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as ex:
            results = list(ex.map(lambda w: _solve_one(w, cfg, solver_cfg), work))
    else:
        results = [_solve_one(w, cfg, solver_cfg) for w in work]
    wall = time.perf_counter() - start

    X = np.full((T, J, 3), np.nan)
    failures, iters, conv = [], [], []
    trace_records = []
    for (ti, k, _), (pt, err, trace) in zip(tasks, results):
        if pt is None:
            flags[ti][k] = "failed"
            failures.append({"t": stream.frames[ti], "joint": k, "error": err})
            continue
        X[ti, k] = pt.xyz
        iters.append(pt.iterations)
        conv.append(bool(pt.converged))
        if not pt.converged:
            flags[ti][k] = "not_converged"
        for rec in trace or []:
            trace_records.append({"t": stream.frames[ti], "joint": k, **rec})
    save_pose_file(cfg.output, X, flags, stream.frames)
    if cfg.trace:
        write_trace(trace_records, cfg.trace)
    n = len(tasks)
    report = {
        "solver": cfg.solver,
        "window": cfg.window,
        "problems": n,
        "solved": n - len(failures),
        "failed": len(failures),
        "convergence_rate": (sum(conv) / len(conv)) if conv else 0.0,
        "mean_iterations": float(np.mean(iters)) if iters else 0.0,
        "failures": failures,
        "partial": notes,
    }
    report_path = cfg.report or Path(cfg.output).with_suffix(".report.json")
    Path(report_path).write_text(json.dumps(report, indent=1) + "\n")
    print(
        f"solved {report['solved']}/{n}  converged {report['convergence_rate']:.3f}  "
        f"mean iterations {report['mean_iterations']:.2f}  wall {wall:.3f}s",
        file=out,
    )
    return EXIT_SOLVE if n and len(failures) == n else EXIT_OK


def _gen_config(path):
    from .synth import GeneratorConfig

    if path is None:
        return GeneratorConfig()
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: line {e.lineno}: {e.msg}") from None
    try:
        return GeneratorConfig.from_dict(d)
    except TypeError as e:
        raise ConfigError("config", str(e)) from None


def _parse_range(text, name):
    try:
        parts = [int(x) for x in str(text).split(",")]
    except ValueError:
        raise UsageError(f"{name}: expected integers, got {text!r}") from None
    if len(parts) == 1:
        parts *= 2
    if len(parts) != 2:
        raise UsageError(f"{name}: expected LO,HI")
    return tuple(parts)


def cmd_synth(args, out=None) -> int:
    from dataclasses import replace

    from .synth import CorruptionConfig, generate_dataset, load_motion, load_skeleton, procedural_motion

    cfg = _gen_config(args.config)
    if args.cameras is not None:
        cfg = replace(cfg, n_cameras=_parse_range(args.cameras, "--cameras"))
    if args.no_corruption:
        cfg = replace(cfg, corruption=CorruptionConfig.disabled())
    if args.motion:
        skel = load_skeleton(args.skeleton) if args.skeleton else None
        seqs = [load_motion(p, skel) for p in args.motion]
        source = {"kind": "files", "motion": [str(p) for p in args.motion], "skeleton": args.skeleton}
    else:
        seqs = []
        rngs = np.random.SeedSequence([args.seed, 1]).spawn(args.sequences)
        for ss in rngs:
            seqs.append(procedural_motion(np.random.default_rng(ss), args.frames))
        source = {"kind": "procedural", "count": args.sequences, "frames": args.frames}
    manifest = generate_dataset(seqs, cfg, args.out, args.seed, source=source)
    print(f"wrote {len(seqs)} samples; manifest {manifest}", file=out)
    return EXIT_OK


def cmd_eval(pred_path, gt_path, out_path=None, out=None) -> int:
    _, P, _ = load_pose_file(pred_path)
    _, G, _ = load_pose_file(gt_path)
    report = metric_report(PoseSequence3D(P), PoseSequence3D(G))
    text = json.dumps(report, indent=1)
    if out_path:
        Path(out_path).write_text(text + "\n")
    print(text, file=out)
    return EXIT_OK


def cmd_bench(args, out=None) -> int:
    from dataclasses import replace

    from .bench import BenchConfig, run_bench, write_bench_csv

    gen = _gen_config(args.config)
    counts = tuple(int(x) for x in args.cameras.split(","))
    gen = replace(gen, n_cameras=(min(counts), max(counts)))
    from .triangulation import SolverConfig

    cfg = BenchConfig(
        camera_counts=counts,
        trials=args.trials,
        seed=args.seed,
        frames=args.frames,
        density=args.density,
        generator=gen,
        solver=SolverConfig(tolerance_mm=args.tolerance_mm, init_mode=args.init),
    )
    res = run_bench(cfg, threads=args.threads)
    timing = Path(args.out).with_suffix(".timing.csv")
    write_bench_csv(res, args.out, timing)
    for row in res.rows():
        print(f"V={row['V']:2d} {row['method']:7s} median {row['median_error_mm']:8.3f} mm", file=out)
    print(f"mle time log-log slope {res.time_slope():.3f}", file=out)
    print(f"fallbacks to DLT: mle {res.mle_fallbacks}, ransac {res.ransac_fallbacks}", file=out)
    return EXIT_OK


def cmd_heatmap(args, out=None) -> int:
    stream = load_keypoint_stream(args.keypoints)
    if args.frame not in stream.frames:
        raise UsageError(f"--frame {args.frame} not in stream (frames {stream.frames[0]}..{stream.frames[-1]})")
    if args.view not in stream.views:
        raise UsageError(f"--view {args.view!r} not in stream")
    if not 0 <= args.joint < stream.n_joints:
        raise UsageError(f"--joint {args.joint} out of range [0, {stream.n_joints})")
    ti, vi = stream.frames.index(args.frame), stream.views.index(args.view)
    if not stream.valid[ti, vi, args.joint]:
        raise ParseError("keypoint is not valid for that frame/view/joint")
    model = _load_density(args.density)
    obs = KeypointObservation(stream.uv[ti, vi, args.joint], stream.sigma[ti, vi, args.joint], model)
    half = args.window * obs.sigma
    bbox = BoundingBox(*(obs.mu - half), *(obs.mu + half))
    cell = args.cell if args.cell else float(min(obs.sigma)) / 4
    grid = render_density_grid(model, obs, bbox, cell)
    sidecar = write_pgm(grid, args.out)
    print(f"wrote {args.out} and {sidecar}; integral {grid.integral():.6f}", file=out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mvpose", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("triangulate", help="solve 3D joints from a keypoint stream")
    t.add_argument("--calib", required=True, type=Path)
    t.add_argument("--keypoints", required=True, type=Path)
    t.add_argument("--compiler-keypoints", type=Path)
    t.add_argument("--density", type=Path, help="density model for the image branch (default Gaussian)")
    t.add_argument("--compiler-density", type=Path)
    t.add_argument("--solver", choices=("mle", "dlt", "ransac", "grid"), default="mle")
    t.add_argument("--tolerance-mm", type=float, default=1e-3)
    t.add_argument("--max-iterations", type=int, default=100)
    t.add_argument("--init", choices=("dlt", "zero"), default="dlt")
    t.add_argument("--window", type=int, default=1, help="temporal window length (metadata)")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--threads", type=int, default=1)
    t.add_argument("--trace", type=Path)
    t.add_argument("--report", type=Path)
    t.add_argument("--out", required=True, type=Path)

    s = sub.add_parser("synth", help="generate synthetic multi-view data")
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--sequences", type=int, default=4, help="number of procedural sequences")
    s.add_argument("--frames", type=int, default=5)
    s.add_argument("--motion", nargs="*", type=Path, help="motion CSV/JSON files instead of procedural motion")
    s.add_argument("--skeleton", type=Path)
    s.add_argument("--cameras", help="camera count range LO,HI")
    s.add_argument("--config", type=Path, help="generator config JSON")
    s.add_argument("--no-corruption", action="store_true")
    s.add_argument("--seed", type=int, default=0)

    e = sub.add_parser("eval", help="pose metrics of a prediction against ground truth")
    e.add_argument("--pred", required=True, type=Path)
    e.add_argument("--gt", required=True, type=Path)
    e.add_argument("--out", type=Path)

    b = sub.add_parser("bench", help="error and solver time against camera count")
    b.add_argument("--cameras", default="2,3,4,6,8")
    b.add_argument("--trials", type=int, default=50)
    b.add_argument("--frames", type=int, default=1)
    b.add_argument("--density", choices=("gaussian", "laplace"), default="gaussian")
    b.add_argument("--tolerance-mm", type=float, default=1e-3)
    b.add_argument("--init", choices=("dlt", "zero"), default="dlt")
    b.add_argument("--config", type=Path)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--threads", type=int, default=1)
    b.add_argument("--out", required=True, type=Path)

    h = sub.add_parser("heatmap", help="export a keypoint density as PGM")
    h.add_argument("--keypoints", required=True, type=Path)
    h.add_argument("--density", type=Path)
    h.add_argument("--frame", type=int, required=True)
    h.add_argument("--view", required=True)
    h.add_argument("--joint", type=int, required=True)
    h.add_argument("--cell", type=float, help="cell size in pixels (default sigma/4)")
    h.add_argument("--window", type=float, default=6.0, help="half-width in sigmas")
    h.add_argument("--out", required=True, type=Path)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else 0
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "triangulate":
            cfg = RunConfig(
                calibration=args.calib,
                keypoints=args.keypoints,
                output=args.out,
                compiler_keypoints=args.compiler_keypoints,
                density=args.density,
                compiler_density=args.compiler_density,
                solver=args.solver,
                tolerance_mm=args.tolerance_mm,
                max_iterations=args.max_iterations,
                init=args.init,
                window=args.window,
                seed=args.seed,
                threads=args.threads,
                trace=args.trace,
                report=args.report,
            )
            return cmd_triangulate(cfg)
        if args.command == "synth":
            return cmd_synth(args)
        if args.command == "eval":
            return cmd_eval(args.pred, args.gt, args.out)
        if args.command == "bench":
            return cmd_bench(args)
        if args.command == "heatmap":
            return cmd_heatmap(args)
    except (UsageError, ConfigError) as e:
        print(f"mvpose {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (MVPoseError, OSError, ValueError) as e:
        print(f"mvpose {args.command}: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
