import json
import os
import subprocess

import numpy as np
import pytest
from scipy.io import wavfile

CLI = os.environ.get("AETSEP_CLI", "aetsep")
TINY = [
    "--window_len", "32", "--stride", "8", "--hidden", "8,8",
    "--minutes", "0.05", "--batch_size", "2", "--snippet_s", "0.5",
    "--toy_speakers", "2", "--toy_minutes", "0.6", "--test_minutes", "0.05",
    "--eval_threads", "1",
]


def run(*args, check=True):
    return subprocess.run([CLI, *map(str, args)], capture_output=True, text=True, check=check)


def read(path):
    rate, x = wavfile.read(path)
    return rate, x.astype(np.float64)


def rms(x):
    return float(np.sqrt(np.mean(x**2)))


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    run("synth-data", "--minutes", 0.6, "--seed", 3, "--speakers", 2,
        "--test-minutes", 0.1, "--out", root / "toy")
    for variant, steps in (("full_aet_mask", 5), ("stft_smoothed_mask", 1)):
        run("train", "--variant", variant, "--max_steps", steps, *TINY,
            "--toy_dir", root / "train_toy", "--out_dir", root / variant)
    manifest = json.loads((root / "toy" / "test_set" / "manifest.json").read_text())
    return root, manifest["examples"]


def test_separate_is_bitwise_repeatable(workspace):
    root, examples = workspace
    mix = root / "toy" / "test_set" / examples[0]["mixture"]
    ckpt = root / "full_aet_mask" / "checkpoint.aet"
    run("separate", "--ckpt", ckpt, "--in", mix, "--out", root / "a.wav")
    run("separate", "--ckpt", ckpt, "--in", mix, "--out", root / "b.wav")
    assert (root / "a.wav").read_bytes() == (root / "b.wav").read_bytes()


def test_estimate_rms_is_near_the_target(workspace):
    root, examples = workspace
    ckpt = root / "full_aet_mask" / "checkpoint.aet"
    for ex in examples[:3]:
        out = root / f"{ex['id']}_est.wav"
        run("separate", "--ckpt", ckpt, "--in", root / "toy" / "test_set" / ex["mixture"],
            "--out", out)
        _, est = read(out)
        _, target = read(root / "toy" / "test_set" / ex["target"])
        ratio = rms(est) / rms(target[: len(est)])
        assert 0.1 <= ratio <= 10.0


def test_unit_mask_reproduces_the_mixture(workspace):
    root, examples = workspace
    mix_path = root / "toy" / "test_set" / examples[0]["mixture"]
    out = root / "unit.wav"
    run("separate", "--ckpt", root / "stft_smoothed_mask" / "checkpoint.aet",
        "--in", mix_path, "--out", out, "--unit-mask", "--dump-grid", root / "mask.csv")
    rate, est = read(out)
    _, mix = read(mix_path)
    assert rate == 16000
    lo, hi = 32, len(est) - 32
    err = np.linalg.norm(est[lo:hi] - mix[lo:hi]) / np.linalg.norm(mix[lo:hi])
    assert err < 1e-6
    mask = np.loadtxt(root / "mask.csv", delimiter=",", ndmin=2)
    assert np.all(mask == 1.0)


def test_unit_mask_rejects_direct_variants(workspace, tmp_path):
    root, examples = workspace
    run("train", "--variant", "aet", "--max_steps", 1, *TINY,
        "--toy_dir", root / "train_toy", "--out_dir", tmp_path / "aet")
    r = run("separate", "--ckpt", tmp_path / "aet" / "checkpoint.aet",
            "--in", root / "toy" / "test_set" / examples[0]["mixture"],
            "--out", tmp_path / "x.wav", "--unit-mask", check=False)
    assert r.returncode == 2
    assert "mask variant" in r.stderr


def test_evaluate_scores_every_manifest_row(workspace):
    root, examples = workspace
    csv = root / "eval.csv"
    out = root / "eval.json"
    run("evaluate", "--ckpt", root / "full_aet_mask" / "checkpoint.aet",
        "--manifest", root / "toy" / "test_set" / "manifest.json",
        "--csv", csv, "--json", out, "--threads", 1)
    report = json.loads(out.read_text())
    assert len(report["rows"]) == len(examples)
    assert len(csv.read_text().strip().splitlines()) == len(examples) + 1


def test_bad_config_key_fails_cleanly(tmp_path):
    r = run("train", "--no_such_key", "1", "--out_dir", tmp_path, check=False)
    assert r.returncode == 2
    assert "no_such_key" in r.stderr
