import json

import numpy as np
import pytest

from mvpose.camera import load_calibration
from mvpose.cli import main
from mvpose.density import GaussianDensity, KeypointObservation, log_prob
from mvpose.errors import ParseError
from mvpose.io import load_keypoint_stream, load_pose_file, save_keypoint_stream, save_pose_file
from mvpose.metrics import metric_report
from mvpose.triangulation import ViewObservation, mle_refine


@pytest.fixture(scope="module")
def clean_data(tmp_path_factory):
    out = tmp_path_factory.mktemp("clean")
    assert main(["synth", "--out", str(out), "--sequences", "2", "--frames", "3", "--no-corruption", "--seed", "3"]) == 0
    return out


@pytest.fixture(scope="module")
def noisy_data(tmp_path_factory):
    out = tmp_path_factory.mktemp("noisy")
    assert main(["synth", "--out", str(out), "--sequences", "1", "--frames", "2", "--seed", "4"]) == 0
    return out


def tri_args(data, out, *extra):
    return [
        "triangulate",
        "--calib", str(data / "sample_00000.calib.json"),
        "--keypoints", str(data / "sample_00000.keypoints.jsonl"),
        "--out", str(out),
        *extra,
    ]


def test_keypoint_stream_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    uv = rng.uniform(0, 1000, (3, 2, 5, 2))
    sigma = rng.uniform(1, 3, (3, 2, 5, 2))
    valid = rng.random((3, 2, 5)) > 0.2
    save_keypoint_stream(tmp_path / "k.jsonl", ["a", "b"], uv, sigma, valid, frames=[10, 11, 12])
    s = load_keypoint_stream(tmp_path / "k.jsonl")
    assert s.frames == [10, 11, 12] and s.views == ["a", "b"]
    assert np.array_equal(s.valid, valid)
    assert np.array_equal(s.uv[valid], uv[valid])
    assert np.array_equal(s.sigma, sigma)


def test_keypoint_stream_errors(tmp_path):
    p = tmp_path / "k.jsonl"
    p.write_text('{"t": 0, "view": "a", "u": [1], "v": [2]}\n{"t": 0, "view": "b", "u": [1, 2], "v": [2, 3]}\n')
    with pytest.raises(ParseError, match="line 2"):
        load_keypoint_stream(p)
    p.write_text('{"t": 0, "view": "a", "u": [1]}\n')
    with pytest.raises(ParseError, match="'v'"):
        load_keypoint_stream(p)


def test_pose_file_round_trip(tmp_path):
    X = np.arange(24, dtype=float).reshape(2, 4, 3)
    X[1, 2] = np.nan
    save_pose_file(tmp_path / "p.json", X, frames=[5, 6])
    frames, Y, flags = load_pose_file(tmp_path / "p.json")
    assert frames == [5, 6] and np.array_equal(np.isnan(Y), np.isnan(X))
    assert np.array_equal(Y[~np.isnan(X)], X[~np.isnan(X)])
    doc = json.loads((tmp_path / "p.json").read_text())
    assert doc["frames"][1]["joints"][2] is None


def test_triangulate_noiseless_closure(clean_data, tmp_path):
    out = tmp_path / "pred.json"
    assert main(tri_args(clean_data, out)) == 0
    _, X, flags = load_pose_file(out)
    _, G, _ = load_pose_file(clean_data / "sample_00000.gt.json")
    solved = np.all(np.isfinite(X), axis=-1)
    assert solved.mean() > 0.9
    assert np.linalg.norm(X[solved] - G[solved], axis=-1).max() < 1e-6
    report = json.loads(out.with_suffix(".report.json").read_text())
    assert report["convergence_rate"] == 1.0 and report["failed"] == len(report["failures"])


def test_triangulate_threads_identical(noisy_data, tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(tri_args(noisy_data, a, "--threads", "1")) == 0
    assert main(tri_args(noisy_data, b, "--threads", "4")) == 0
    assert a.read_bytes() == b.read_bytes()
    assert a.with_suffix(".report.json").read_bytes() == b.with_suffix(".report.json").read_bytes()


def test_triangulate_matches_library(noisy_data, tmp_path):
    out = tmp_path / "p.json"
    assert main(tri_args(noisy_data, out)) == 0
    _, X, _ = load_pose_file(out)
    cams = {c.id: c for c in load_calibration(noisy_data / "sample_00000.calib.json")}
    s = load_keypoint_stream(noisy_data / "sample_00000.keypoints.jsonl")
    G = GaussianDensity()
    t, k = 1, 5
    views = [
        ViewObservation(cams[v], KeypointObservation(s.uv[t, i, k], s.sigma[t, i, k], G))
        for i, v in enumerate(s.views)
        if s.valid[t, i, k]
    ]
    assert np.array_equal(mle_refine(views).xyz, X[t, k])


@pytest.mark.parametrize("solver", ["dlt", "ransac", "grid"])
def test_triangulate_baselines(noisy_data, tmp_path, solver):
    out = tmp_path / f"{solver}.json"
    assert main(tri_args(noisy_data, out, "--solver", solver)) == 0
    _, X, _ = load_pose_file(out)
    _, G, _ = load_pose_file(noisy_data / "sample_00000.gt.json")
    ok = np.all(np.isfinite(X), axis=-1)
    assert np.median(np.linalg.norm(X[ok] - G[ok], axis=-1)) < 100


def test_missing_view_is_flagged(clean_data, tmp_path):
    lines = (clean_data / "sample_00000.keypoints.jsonl").read_text().splitlines()
    rec = json.loads(lines[0])
    rec["u"][4] = rec["v"][4] = None
    rec["valid"][4] = False
    kp = tmp_path / "k.jsonl"
    kp.write_text("\n".join([json.dumps(rec)] + lines[1:]) + "\n")
    out = tmp_path / "p.json"
    args = ["triangulate", "--calib", str(clean_data / "sample_00000.calib.json"), "--keypoints", str(kp), "--out", str(out)]
    assert main(args) == 0
    _, X, flags = load_pose_file(out)
    report = json.loads(out.with_suffix(".report.json").read_text())
    assert {"t": rec["t"], "joint": 4, "missing_views": [rec["view"]]} in report["partial"]
    assert flags[0][4] in ("partial", "failed")


def test_single_view_stream_fails(clean_data, tmp_path):
    lines = (clean_data / "sample_00000.keypoints.jsonl").read_text().splitlines()
    first = json.loads(lines[0])["view"]
    kp = tmp_path / "k.jsonl"
    kp.write_text("\n".join(l for l in lines if json.loads(l)["view"] == first) + "\n")
    out = tmp_path / "p.json"
    args = ["triangulate", "--calib", str(clean_data / "sample_00000.calib.json"), "--keypoints", str(kp), "--out", str(out)]
    assert main(args) == 4
    report = json.loads(out.with_suffix(".report.json").read_text())
    assert report["solved"] == 0 and report["failures"]


def test_triangulate_data_errors(clean_data, tmp_path):
    assert main(tri_args(clean_data, tmp_path / "p.json") + ["--tolerance-mm", "0"]) in (2, 3)
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{nope\n")
    args = ["triangulate", "--calib", str(clean_data / "sample_00000.calib.json"), "--keypoints", str(bad), "--out", str(tmp_path / "o.json")]
    assert main(args) == 3
    assert main(["triangulate", "--calib", str(tmp_path / "none.json"), "--keypoints", str(bad), "--out", "x"]) == 3


def test_trace_written(noisy_data, tmp_path):
    out, trace = tmp_path / "p.json", tmp_path / "trace.jsonl"
    assert main(tri_args(noisy_data, out, "--trace", str(trace), "--init", "zero")) == 0
    recs = [json.loads(l) for l in trace.read_text().splitlines()]
    assert recs and set(recs[0]) >= {"t", "joint", "iter", "loss", "step_norm", "skipped_views"}


def test_synth_reproducible(tmp_path):
    args = ["synth", "--sequences", "2", "--frames", "2", "--seed", "9"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "manifest.json").read_bytes() == (tmp_path / "b" / "manifest.json").read_bytes()


def test_synth_invalid_config(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"corruption": {"occlusion_prob": 3}}))
    assert main(["synth", "--out", str(tmp_path / "o"), "--config", str(cfg)]) == 2
    assert "corruption.occlusion_prob" in capsys.readouterr().err


def test_synth_zero_sequences(tmp_path):
    assert main(["synth", "--out", str(tmp_path), "--sequences", "0"]) == 0
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["files"] == [] and man["samples"] == []


def test_eval(clean_data, tmp_path, capsys):
    gt = clean_data / "sample_00000.gt.json"
    assert main(["eval", "--pred", str(gt), "--gt", str(gt)]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert max(rep[m] for m in ("mpjpe", "pa_mpjpe", "n_mpjpe", "ta_mpjpe")) < 1e-9
    frames, G, _ = load_pose_file(gt)
    shifted = tmp_path / "s.json"
    save_pose_file(shifted, G + [3, 4, 12], frames=frames)
    out = tmp_path / "r.json"
    assert main(["eval", "--pred", str(shifted), "--gt", str(gt), "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["ta_mpjpe"] < 1e-9 and rep["mpjpe"] == pytest.approx(13.0)
    assert rep == json.loads(json.dumps(metric_report(G + [3, 4, 12], G)))


def test_bench_reproducible(tmp_path):
    args = ["bench", "--trials", "1", "--cameras", "2,3", "--seed", "1"]
    assert main(args + ["--out", str(tmp_path / "a.csv")]) == 0
    assert main(args + ["--out", str(tmp_path / "b.csv")]) == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "a.timing.csv").exists()
    header = (tmp_path / "a.csv").read_text().splitlines()[0]
    assert header.startswith("V,method,median_error_mm")


def test_heatmap(noisy_data, tmp_path, capsys):
    kp = noisy_data / "sample_00000.keypoints.jsonl"
    s = load_keypoint_stream(kp)
    t, vi, k = 0, 0, int(np.flatnonzero(s.valid[0, 0])[0])
    out = tmp_path / "h.pgm"
    assert main(["heatmap", "--keypoints", str(kp), "--frame", str(s.frames[t]), "--view", s.views[vi], "--joint", str(k), "--out", str(out)]) == 0
    meta = json.loads(out.with_suffix(".json").read_text())
    text = capsys.readouterr().out
    assert abs(float(text.rsplit("integral", 1)[1]) - 1) < 0.03
    rows = out.read_text().split("\n")
    w, h = map(int, rows[1].split())
    img = np.array([list(map(int, r.split())) for r in rows[3 : 3 + h]])
    # levels are quantized, so the cell holding the keypoint carries the top level
    c, r = ((s.uv[t, vi, k] - meta["origin"]) // meta["cell"]).astype(int)
    assert img[r, c] == 255 == img.max()
    o = KeypointObservation(s.uv[t, vi, k], s.sigma[t, vi, k], GaussianDensity())
    center = np.array(meta["origin"]) + (np.array([c, r]) + 0.5) * meta["cell"]
    assert meta["max"] == pytest.approx(log_prob(GaussianDensity(), center, o), abs=1e-6)


def test_heatmap_usage_errors(noisy_data, tmp_path):
    kp = str(noisy_data / "sample_00000.keypoints.jsonl")
    base = ["heatmap", "--keypoints", kp, "--out", str(tmp_path / "h.pgm")]
    assert main(base + ["--frame", "0", "--view", "cam0", "--joint", "99"]) == 2
    assert main(base + ["--frame", "999", "--view", "cam0", "--joint", "0"]) == 2
    assert main(base + ["--frame", "0", "--view", "nope", "--joint", "0"]) == 2


def test_usage_errors():
    assert main([]) == 2
    assert main(["triangulate"]) == 2
    assert main(["triangulate", "--solver", "magic", "--calib", "a", "--keypoints", "b", "--out", "c"]) == 2
