import json
import os
import struct
import subprocess
import sys
import zlib

import numpy as np
import pytest

from ksvs import __version__
from ksvs.cli import dispatch, main
from ksvs.plot import png_bytes, read_pgm, render_spectrogram_image, to_gray

TINY_CFG = {"d_model": 8, "sr_channels": 8, "batch_size": 2, "crop_frames": 8,
            "disc_channels": [2, 4], "enc_dilations": [1, 3], "dec_dilations": [1, 3]}


def test_orientation_and_scaling(tmp_path):
    spec = np.zeros((80, 64))
    spec[-1, :] = 1.0  # top frequency row
    spec[:, -1] = 0.5
    paths = render_spectrogram_image(spec, tmp_path / "m.pgm")
    img = read_pgm(paths[0])
    assert img.shape == (80, 64)
    assert np.all(img[0, :-1] == 255) and img[-1, 0] == 0
    assert paths[1].endswith(".png")


def test_constant_matrix_is_mid_gray():
    assert np.all(to_gray(np.full((3, 4), 7.0)) == 128)


def test_bad_matrices():
    with pytest.raises(ValueError):
        to_gray(np.array([[np.nan]]))
    with pytest.raises(ValueError):
        to_gray(np.zeros(5))


def test_png_structure():
    img = to_gray(np.arange(12.0).reshape(3, 4))
    data = png_bytes(img)
    assert data[:8] == b"\x89PNG\r\n\x1a\n"
    w, h = struct.unpack(">II", data[16:24])
    assert (w, h) == (4, 3)
    idat_len = struct.unpack(">I", data[33:37])[0]
    raw = zlib.decompress(data[41:41 + idat_len])
    rows = np.frombuffer(raw, np.uint8).reshape(3, 5)
    assert np.array_equal(rows[:, 1:], img) and not rows[:, 0].any()


def test_unwritable_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        render_spectrogram_image(np.ones((2, 2)), blocker / "sub" / "x.pgm")


def test_version(capsys):
    with pytest.raises(SystemExit) as e:
        main(["--version"])
    assert e.value.code == 0
    assert __version__ in capsys.readouterr().out


def test_unknown_command_and_flag(capsys):
    for argv in (["bogus"], ["train", "--nope", "1"]):
        with pytest.raises(SystemExit) as e:
            main(argv)
        assert e.value.code != 0
    assert "usage" in capsys.readouterr().err


def test_missing_score_named(tmp_path):
    res = dispatch(["synth", "--score", str(tmp_path / "missing.json"), "--checkpoint", "c", "--out", "o.wav"])
    assert res.code != 0 and "missing.json" in res.summary


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "ksvs", "--version"], capture_output=True, text=True,
                         env={**os.environ, "PYTHONPATH": os.path.join(os.path.dirname(__file__), "..", "src")})
    assert out.returncode == 0 and __version__ in out.stdout


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    res = dispatch(["dataset", "synth", "--seed", "7", "--out", str(root / "d"), "--n-songs", "4"])
    assert res.code == 0
    (root / "cfg.json").write_text(json.dumps(TINY_CFG))
    res = dispatch(["train", "--config", str(root / "cfg.json"), "--manifest", str(root / "d" / "manifest.json"),
                    "--iters", "3", "--out", str(root / "run")])
    assert res.code == 0, res.summary
    return root


def test_dataset_idempotent(workspace, tmp_path):
    dispatch(["dataset", "synth", "--seed", "7", "--out", str(tmp_path / "d2"), "--n-songs", "4"])
    a, b = workspace / "d", tmp_path / "d2"
    for name in sorted(os.listdir(a)):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_train_artifacts_and_resume(workspace):
    run = workspace / "run"
    lines = (run / "metrics.jsonl").read_text().splitlines()
    assert len(lines) == 3
    assert json.loads((run / "config.json").read_text())["d_model"] == 8
    res = dispatch(["train", "--manifest", str(workspace / "d" / "manifest.json"), "--checkpoint",
                    str(run / "checkpoint.svsk"), "--iters", "4", "--out", str(workspace / "run2")])
    assert res.code == 0 and "iteration 4" in res.summary


def test_synth_plot_eval(workspace, tmp_path):
    ck = str(workspace / "run" / "checkpoint.svsk")
    score = str(workspace / "d" / "song_003.json")
    res = dispatch(["synth", "--checkpoint", ck, "--score", score, "--out", str(tmp_path / "a.wav"), "--gl-iters", "2"])
    assert res.code == 0
    dispatch(["synth", "--checkpoint", ck, "--score", score, "--out", str(tmp_path / "b.wav"), "--gl-iters", "2"])
    assert (tmp_path / "a.wav").read_bytes() == (tmp_path / "b.wav").read_bytes()

    res = dispatch(["plot", "--checkpoint", ck, "--score", score, "--out", str(tmp_path / "img")])
    assert res.code == 0
    names = set(os.listdir(tmp_path / "img"))
    assert {"mask.pgm", "dm.pgm", "mel.pgm", "linear.pgm"} <= names
    assert read_pgm(tmp_path / "img" / "mel.pgm").shape[0] == 80
    assert read_pgm(tmp_path / "img" / "linear.pgm").shape[0] == 513

    out = tmp_path / "r.json"
    res = dispatch(["eval", "--checkpoint", ck, "--manifest", str(workspace / "d" / "manifest.json"),
                    "--out", str(out), "--gl-iters", "2"])
    assert res.code == 0
    first = out.read_text()
    dispatch(["eval", "--checkpoint", ck, "--manifest", str(workspace / "d" / "manifest.json"),
              "--out", str(out), "--gl-iters", "2"])
    assert out.read_text() == first
    res = dispatch(["eval", "--reference", "--manifest", str(workspace / "d" / "manifest.json"), "--out", str(out)])
    assert json.loads(out.read_text())["aggregate"]["f1"] >= 0.95


def test_gradcheck_command():
    assert dispatch(["gradcheck"]).code == 0
