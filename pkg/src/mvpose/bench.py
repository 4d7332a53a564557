"""Camera-count scalability benchmark on synthetic corrupted data.

Each trial synthesizes one scene with the largest requested camera count;
smaller counts use the first ``V`` of those cameras so every ``V`` sees the
same subject and corruption draws. Only the solver stage is timed.
"""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from .density import GaussianDensity, KeypointObservation, LaplaceDensity
from .errors import AllViewsSkipped, NoConsensus
from .synth import GeneratorConfig, procedural_motion, synthesize
from .triangulation import SolverConfig, ViewObservation, dlt, mle_refine, ransac_triangulate

METHODS = ("mle", "dlt", "ransac")


@dataclass
class BenchConfig:
    camera_counts: tuple = (2, 3, 4, 6, 8)
    trials: int = 50
    seed: int = 0
    frames: int = 1
    density: str = "gaussian"
    ransac_iters: int = 20
    ransac_threshold_px: float = 5.0
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not self.camera_counts or min(self.camera_counts) < 2:
            raise ValueError("camera counts must be >= 2")
        if self.density not in ("gaussian", "laplace"):
            raise ValueError(f"unknown density {self.density!r}")


@dataclass
class BenchResult:
    camera_counts: tuple
    errors: dict  # (V, method) -> per-trial MPJPE list
    times: dict  # (V, method) -> per-trial solver seconds
    ransac_fallbacks: int = 0
    mle_fallbacks: int = 0

    def median(self, V, method) -> float:
        return float(np.median(self.errors[(V, method)]))

    def rows(self):
        for V in self.camera_counts:
            for m in METHODS:
                e = np.asarray(self.errors[(V, m)])
                yield {
                    "V": V,
                    "method": m,
                    "median_error_mm": float(np.median(e)),
                    "mean_error_mm": float(e.mean()),
                    "std_error_mm": float(e.std()),
                    "n_trials": len(e),
                }

    def timing_rows(self):
        for V in self.camera_counts:
            for m in METHODS:
                t = np.asarray(self.times[(V, m)])
                yield {"V": V, "method": m, "mean_wall_time_s": float(t.mean()), "std_wall_time_s": float(t.std())}

    def time_slope(self, method="mle") -> float:
        """Log-log slope of mean solver time against camera count."""
        V = np.array(self.camera_counts, dtype=float)
        t = np.array([np.mean(self.times[(v, method)]) for v in self.camera_counts])
        return float(np.polyfit(np.log(V), np.log(t), 1)[0])


def _trial(cfg: BenchConfig, trial: int, ss: np.random.SeedSequence, model):
    rng = np.random.default_rng(ss)
    seq = procedural_motion(rng, cfg.frames)
    vmax = max(cfg.camera_counts)
    sample = synthesize(seq, cfg.generator, rng, n_views=vmax)
    obs = sample.observed
    T, _, J, _ = obs.shape
    out_err, out_time = {}, {}
    fallbacks = {"ransac": 0, "mle": 0}
    for V in cfg.camera_counts:
        problems = []
        for t in range(T):
            for k in range(J):
                views = [v for v in range(V) if sample.visible[t, v, k]]
                if len(views) >= 2:
                    problems.append((t, k, views))
        if not problems:
            continue
        gt = np.array([sample.motion.joints[t, k] for t, k, _ in problems])
        est = {m: np.zeros_like(gt) for m in METHODS}
        elapsed = dict.fromkeys(METHODS, 0.0)
        for n, (t, k, views) in enumerate(problems):
            pix = [(sample.cameras[v], obs[t, v, k]) for v in views]
            vobs = [
                ViewObservation(cam, KeypointObservation(uv, [sample.sigma[t, v, k]] * 2, model))
                for (cam, uv), v in zip(pix, views)
            ]
            t0 = time.perf_counter()
            try:
                est["mle"][n] = mle_refine(vobs, cfg.solver).xyz
            except AllViewsSkipped:
                est["mle"][n] = np.nan
            t1 = time.perf_counter()
            est["dlt"][n] = dlt(pix).xyz
            t2 = time.perf_counter()
            if np.isnan(est["mle"][n, 0]):
                # no point in front of any camera: score the linear estimate
                est["mle"][n] = est["dlt"][n]
                fallbacks["mle"] += 1
            seed = [cfg.seed, trial, V, t, k]
            try:
                est["ransac"][n] = ransac_triangulate(pix, cfg.ransac_iters, cfg.ransac_threshold_px, seed).xyz
            except NoConsensus:
                est["ransac"][n] = est["dlt"][n]
                fallbacks["ransac"] += 1
            t3 = time.perf_counter()
            elapsed["mle"] += t1 - t0
            elapsed["dlt"] += t2 - t1
            elapsed["ransac"] += t3 - t2
        for m in METHODS:
            out_err[(V, m)] = float(np.linalg.norm(est[m] - gt, axis=1).mean())
            out_time[(V, m)] = elapsed[m]
    return out_err, out_time, fallbacks


def run_bench(cfg: BenchConfig, threads: int = 1) -> BenchResult:
    model = GaussianDensity() if cfg.density == "gaussian" else LaplaceDensity()
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.trials)
    jobs = [(i, s) for i, s in enumerate(seeds)]
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(threads) as ex:
            results = list(ex.map(lambda j: _trial(cfg, j[0], j[1], model), jobs))
    else:
        results = [_trial(cfg, i, s, model) for i, s in jobs]
    errors = {(V, m): [] for V in cfg.camera_counts for m in METHODS}
    times = {(V, m): [] for V in cfg.camera_counts for m in METHODS}
    fallbacks = {"ransac": 0, "mle": 0}
    for err, tim, fb in results:
        for key in fallbacks:
            fallbacks[key] += fb[key]
        for key, val in err.items():
            errors[key].append(val)
            times[key].append(tim[key])
    return BenchResult(tuple(cfg.camera_counts), errors, times, fallbacks["ransac"], fallbacks["mle"])


def write_bench_csv(result: BenchResult, path, timing_path=None) -> None:
    """Accuracy table to ``path``; wall times (non-deterministic) to ``timing_path``."""
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(
            fh, ["V", "method", "median_error_mm", "mean_error_mm", "std_error_mm", "n_trials"], lineterminator="\n"
        )
        w.writeheader()
        for row in result.rows():
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    if timing_path is not None:
        with open(timing_path, "w", newline="") as fh:
            w = csv.DictWriter(fh, ["V", "method", "mean_wall_time_s", "std_wall_time_s"], lineterminator="\n")
            w.writeheader()
            for row in result.timing_rows():
                w.writerow(row)
