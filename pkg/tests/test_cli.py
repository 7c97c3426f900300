import json
import re
import shutil

import numpy as np
import pytest

from t4d import cli
from t4d.losses import loss_mse
from t4d.mesh import load_lips, load_mask, load_mesh, load_sequence, save_mesh
from t4d.operators import EigensolverError, load_operators
from t4d.primitives import icosphere
from t4d.registered import registered_metrics
from t4d.synth import lip_signal
from t4d.unregistered import unregistered_metrics

SMALL = ["--nx", "15", "--ny", "19"]


def synth(out, seed, frames=20, amplitude=4.0, ann=None):
    ann = ann or out.parent / "ann"
    args = ["synth", "--out", str(out), "--frames", str(frames), "--seed", str(seed),
            "--amplitude", str(amplitude), "--annotations", str(ann), *SMALL]
    assert cli.main(args) == 0


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    ann = root / "ann"
    synth(root / "gt" / "s01", seed=1, ann=ann)
    synth(root / "pred" / "s01", seed=2, amplitude=3.0, ann=ann)
    synth(root / "gt" / "s02", seed=3, ann=ann)
    synth(root / "pred" / "s02", seed=4, amplitude=5.0, ann=ann)
    return root


def masks(root):
    ann = root / "ann"
    return ["--mouth-mask", str(ann / "mouth.json"), "--upper-mask", str(ann / "upper.json"),
            "--lips", str(ann / "lips.json")]


def evaluate(root, out, *extra, gt="gt", pred="pred"):
    args = ["evaluate", "--gt", str(root / gt), "--pred", str(root / pred),
            "--pattern", "frame_*", "--out", str(out), *extra]
    return cli.main(args)


def test_synth_layout(data):
    frames = sorted((data / "gt" / "s01").glob("frame_*.obj"))
    assert len(frames) == 20
    assert (data / "ann" / "neutral.obj").exists()
    lips = json.loads((data / "ann" / "lips.json").read_text())
    assert len(lips["upper"]) == 3 and len(lips["lower"]) == 3


def test_identical_inputs_give_zero_report(data, tmp_path):
    out = tmp_path / "r.json"
    assert evaluate(data, out, *masks(data), pred="gt") == 0
    rep = json.loads(out.read_text())
    assert len(rep["entries"]) == 2
    for e in rep["entries"]:
        assert all(v == 0.0 for v in e["metrics"].values())


def test_registered_matches_library(data, tmp_path):
    out, table = tmp_path / "r.json", tmp_path / "r.csv"
    assert evaluate(data, out, *masks(data), "--losses", "--csv", str(table)) == 0
    rep = json.loads(out.read_text())
    gt = load_sequence(data / "gt" / "s02", "frame_*")
    pred = load_sequence(data / "pred" / "s02", "frame_*")
    V = gt[0].n_vertices
    ann = data / "ann"
    ref = registered_metrics(gt, pred, load_mask(ann / "mouth.json", V),
                             load_mask(ann / "upper.json", V), load_lips(ann / "lips.json", V))
    entry = next(e for e in rep["entries"] if e["sequence_id"] == "s02")
    for k, v in ref.items():
        assert entry["metrics"][k] == pytest.approx(v, rel=1e-11, abs=1e-15)
    assert entry["metrics"]["mse"] == pytest.approx(loss_mse(gt, pred), rel=1e-11)
    meta = rep["metadata"]
    assert meta["mode"] == "registered" and meta["seed"] is None
    assert meta["conventions"]["lve_frames"] == "mean"
    assert meta["masks"]["mouth"]["size"] > 0
    header = table.read_text().splitlines()[0]
    assert "dtw x10^-2" in header and "delta_m x10^-6" in header


def test_unregistered_matches_library(data, tmp_path):
    rem = tmp_path / "remeshed" / "s01"
    assert cli.main(["remesh", "--input", str(data / "pred" / "s01"), "--out", str(rem),
                     "--seed", "5", "--up", "0.3", "--down", "0.8"]) == 0
    pred = load_sequence(rem)
    assert not pred.is_homogeneous
    out = tmp_path / "u.json"
    assert cli.main(["evaluate", "--mode", "unregistered", "--gt", str(data / "gt" / "s01"),
                     "--pred", str(rem), "--pattern", "frame_*", "--sigma", "2.0",
                     "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    gt = load_sequence(data / "gt" / "s01", "frame_*")
    means, per_frame = unregistered_metrics(gt, pred, 2.0)
    entry = rep["entries"][0]
    for k in means:
        assert entry["metrics"][k] == pytest.approx(means[k], rel=1e-11)
    assert len(entry["per_frame"]["varifold"]) == 20
    assert rep["metadata"]["conventions"]["sigma"] == 2.0


def test_registered_mode_on_remeshed_data_fails(data, tmp_path, capsys):
    rem = tmp_path / "rem"
    cli.main(["remesh", "--input", str(data / "pred" / "s01"), "--out", str(rem), "--seed", "1"])
    rc = cli.main(["evaluate", "--gt", str(data / "gt" / "s01"), "--pred", str(rem),
                   "--pattern", "frame_*", *masks(data)])
    assert rc == 1
    err = capsys.readouterr().err
    assert "s01" in err and "unregistered" in err


def test_mismatched_sequence_counts(data, tmp_path, capsys):
    partial = tmp_path / "pred"
    shutil.copytree(data / "pred" / "s01", partial / "s01")
    assert evaluate(data, tmp_path / "x.json", *masks(data), pred=str(partial)) == 1
    assert "count mismatch" in capsys.readouterr().err


def test_missing_masks(data, tmp_path, capsys):
    assert evaluate(data, tmp_path / "x.json") == 1
    assert "--mouth-mask" in capsys.readouterr().err


def test_bad_sigma(data, tmp_path):
    assert evaluate(data, tmp_path / "x.json", "--mode", "unregistered", "--sigma", "0") == 1


def test_determinism_and_conventions_roundtrip(data, tmp_path):
    a, b, c = tmp_path / "a.json", tmp_path / "b.json", tmp_path / "c.json"
    flags = [*masks(data), "--lve-frames", "max", "--dtw-band", "3", "--losses"]
    assert evaluate(data, a, *flags) == 0
    assert evaluate(data, b, *flags) == 0
    assert a.read_bytes() == b.read_bytes()
    assert evaluate(data, c, *masks(data), "--conventions-from", str(a)) == 0
    ra, rc = json.loads(a.read_text()), json.loads(c.read_text())
    assert rc["metadata"]["conventions"] == ra["metadata"]["conventions"]
    assert rc["entries"] == ra["entries"]


def _polylines(svg, series):
    pat = rf'data-series="{series}"[^>]*points="([^"]+)"'
    return [np.array([[float(v) for v in p.split(",")] for p in pts.split()])
            for pts in re.findall(pat, svg)]


def _local_minima(y):
    return int(np.sum((y[1:-1] < y[:-2]) & (y[1:-1] < y[2:])))


def test_plot_lips_extrema_match_closed_form(tmp_path):
    fps, frames, seed = 30.0, 60, 6
    synth(tmp_path / "gt", seed=seed, frames=frames)
    synth(tmp_path / "pred", seed=seed + 1, frames=frames)
    out = tmp_path / "lips.svg"
    assert cli.main(["plot-lips", "--gt", str(tmp_path / "gt"), "--pred", str(tmp_path / "pred"),
                     "--lips", str(tmp_path / "ann" / "lips.json"), "--out", str(out),
                     "--pattern", "frame_*"]) == 0
    svg = out.read_text()
    assert svg.count('class="panel"') == 6
    assert 'stroke-dasharray' in svg
    gt_lines = _polylines(svg, "gt")
    assert len(gt_lines) == 6
    t = gt_lines[0][:, 0]
    assert np.all(np.diff(t) > 0)
    s = lip_signal(np.arange(frames) / fps, seed)
    # screen y grows downward and the lower lip falls as the mouth opens,
    # so every opening peak is a screen-y maximum
    expected = _local_minima(-s)
    assert expected >= 6
    for line in gt_lines[3:]:
        assert _local_minima(-line[:, 1]) == expected
    for line in gt_lines[:3]:
        assert np.ptp(line[:, 1]) == 0.0


def test_plot_lips_static_and_single_frame(tmp_path):
    synth(tmp_path / "a", seed=0, frames=5, amplitude=0.0)
    lips = tmp_path / "ann" / "lips.json"
    out = tmp_path / "flat.svg"
    assert cli.main(["plot-lips", "--gt", str(tmp_path / "a"), "--pred", str(tmp_path / "a"),
                     "--lips", str(lips), "--out", str(out), "--pattern", "frame_*"]) == 0
    for line in _polylines(out.read_text(), "gt") + _polylines(out.read_text(), "pred"):
        assert np.ptp(line[:, 1]) == 0.0
    one = tmp_path / "one"
    one.mkdir()
    shutil.copy(tmp_path / "a" / "frame_0000.obj", one)
    out1 = tmp_path / "one.svg"
    assert cli.main(["plot-lips", "--gt", str(one), "--pred", str(one), "--lips", str(lips),
                     "--out", str(out1)]) == 0
    svg = out1.read_text()
    assert svg.count("<circle") == 12 and "<polyline" not in svg


def test_operators_command(tmp_path, monkeypatch):
    mesh = tmp_path / "s.obj"
    save_mesh(mesh, icosphere(1))
    out = tmp_path / "ops.npz"
    assert cli.main(["operators", "--mesh", str(mesh), "--k", "8", "--out", str(out)]) == 0
    from t4d.operators import cache_key
    ops = load_operators(out, cache_key(load_mesh(mesh), 8))
    assert ops.eigenvectors.shape == (42, 8)
    monkeypatch.delenv("T4D_CACHE_DIR", raising=False)
    assert cli.main(["operators", "--mesh", str(mesh)]) == 1
    monkeypatch.setenv("T4D_CACHE_DIR", str(tmp_path / "cache"))
    assert cli.main(["operators", "--mesh", str(mesh), "--k", "8"]) == 0
    assert len(list((tmp_path / "cache").iterdir())) == 1


def test_numerical_failure_exit_code(tmp_path, monkeypatch):
    mesh = tmp_path / "s.obj"
    save_mesh(mesh, icosphere(1))

    def boom(*a, **k):
        raise EigensolverError("did not converge")

    monkeypatch.setattr(cli, "precompute_operators", boom)
    assert cli.main(["operators", "--mesh", str(mesh), "--out", str(tmp_path / "o.npz")]) == 2


def test_align_command(tmp_path):
    ref = icosphere(1)
    rot = np.array([[0, -1, 0], [1, 0, 0], [0, 0, 1.0]])
    save_mesh(tmp_path / "ref.obj", ref)
    save_mesh(tmp_path / "src.obj", ref.with_vertices(ref.vertices @ rot.T + 3.0))
    assert cli.main(["align", "--input", str(tmp_path / "src.obj"), "--reference",
                     str(tmp_path / "ref.obj"), "--out", str(tmp_path / "out.obj")]) == 0
    np.testing.assert_allclose(load_mesh(tmp_path / "out.obj").vertices, ref.vertices, atol=1e-7)


def test_mds_command(tmp_path):
    pts = np.random.default_rng(0).normal(size=(6, 2))
    d = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
    np.savetxt(tmp_path / "d.csv", d, delimiter=",", fmt="%.17g")
    assert cli.main(["mds", "--input", str(tmp_path / "d.csv"), "--out", str(tmp_path / "c.csv")]) == 0
    x = np.loadtxt(tmp_path / "c.csv", delimiter=",")
    np.testing.assert_allclose(np.linalg.norm(x[:, None] - x[None], axis=-1), d, atol=1e-9)
    (tmp_path / "bad.csv").write_text("0,1\n2,0\n")
    assert cli.main(["mds", "--input", str(tmp_path / "bad.csv"), "--out", str(tmp_path / "o.csv")]) == 1
