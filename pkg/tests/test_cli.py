import os
import shutil
import subprocess
import sys

import numpy as np
import pytest

from conformal_uq import cli, formats
from conformal_uq.conformal import calibrate, load_calibrator, predict_sets
from conformal_uq.evaluation import empirical_coverage, set_size_stats
from conformal_uq.scores import LabeledScores, predicted_labels
from conformal_uq.synth import BLOCK_SIZE, generate_mcd_stacks

GOLDEN = os.path.join(os.path.dirname(__file__), "golden")


@pytest.fixture
def work(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv(cli.SEED_ENV, raising=False)
    return tmp_path


def run(*argv):
    return cli.main([str(a) for a in argv])


def read(path):
    with open(path, "rb") as f:
        return f.read()


def synth(out, n=3000, seed=42, signal=0.5, jobs=1):
    assert run("synth", "--k", 7, "--n", n, "--concentration", 0.5, "--signal", signal,
               "--seed", seed, "--jobs", jobs, "--out", out) == 0


def split_files(src, n_cal):
    """Write cal/test score and label files from a synth directory."""
    for name in ("scores", "labels"):
        lines = open(os.path.join(src, f"{name}.csv")).read().splitlines()
        with open(f"cal_{name}.csv", "w") as f:
            f.write("\n".join(lines[:n_cal + 1]) + "\n")
        with open(f"test_{name}.csv", "w") as f:
            f.write("\n".join([lines[0]] + lines[n_cal + 1:]) + "\n")


def metrics(path):
    _, cols, rows = formats.read_table(path)
    assert cols == ["metric", "value"]
    return {k: float(v) for k, v in rows}


# -- golden pipeline ----------------------------------------------------------

def test_golden_pipeline(work):
    for name in ("calib_scores.csv", "calib_labels.csv", "test_scores.csv", "test_labels.csv"):
        shutil.copy(os.path.join(GOLDEN, name), name)
    assert run("calibrate", "--scores", "calib_scores.csv", "--labels", "calib_labels.csv",
               "--alpha", 0.5, "--out", "calibrator.txt") == 0
    assert run("predict", "--scores", "test_scores.csv", "--calibrator", "calibrator.txt",
               "--out", "predictions.csv") == 0
    assert run("evaluate", "--predictions", "predictions.csv", "--labels", "test_labels.csv",
               "--out", "evaluation.csv") == 0
    for name in ("calibrator.txt", "predictions.csv", "evaluation.csv"):
        assert read(name) == read(os.path.join(GOLDEN, name)), name
    m = formats.read_manifest("calibrator.txt.manifest.json")
    # (4 + 1) * 0.5 = 2.5, so q_hat is the 3rd smallest of 0.5, 0.75, 0.75, 1.0
    assert m["derived"] == {"quantile_rank": 3, "q_hat": 0.75, "n_calib": 4}


# -- synth --------------------------------------------------------------------

def test_synth_twice_is_byte_identical(work):
    synth("a", n=1000)
    synth("b", n=1000)
    for name in ("scores.csv", "labels.csv"):
        assert read(f"a/{name}") == read(f"b/{name}")
    ma, mb = formats.read_manifest("a/manifest.json"), formats.read_manifest("b/manifest.json")
    assert ma["manifest_sha256"] == mb["manifest_sha256"]
    assert ma["params"] == {"k": 7, "n": 1000, "concentration": 0.5, "signal": 0.5}
    assert ma["seed"] == 42


def test_synth_independent_of_jobs(work):
    n = 2 * BLOCK_SIZE + 11
    synth("one", n=n, jobs=1)
    synth("four", n=n, jobs=4)
    for name in ("scores.csv", "labels.csv"):
        assert read(f"one/{name}") == read(f"four/{name}")


def test_seed_from_environment(work, monkeypatch):
    synth("explicit", n=50, seed=7)
    monkeypatch.setenv(cli.SEED_ENV, "7")
    assert run("synth", "--k", 7, "--n", 50, "--concentration", 0.5, "--signal", 0.5,
               "--out", "env") == 0
    assert read("explicit/scores.csv") == read("env/scores.csv")
    monkeypatch.setenv(cli.SEED_ENV, "seven")
    assert run("synth", "--k", 7, "--n", 50, "--out", "bad") == cli.EXIT_USAGE


@pytest.mark.parametrize("flag, value, name", [
    ("--concentration", 0, "concentration"),
    ("--signal", -1, "signal"),
    ("--k", 1, "k"),
])
def test_synth_invalid_config(work, capsys, flag, value, name):
    argv = {"--k": 7, "--n": 10, "--concentration": 1.0, "--signal": 1.0}
    argv[flag] = value
    flat = [x for kv in argv.items() for x in kv]
    assert run("synth", *flat, "--out", "x") == cli.EXIT_USAGE
    err = capsys.readouterr().err
    assert "usage error" in err and name in err
    assert not os.path.exists("x/scores.csv")


def test_one_hot_oracle_end_to_end_coverage(work):
    synth("d", n=3000, signal="inf")
    split_files("d", 1000)
    assert run("calibrate", "--scores", "cal_scores.csv", "--labels", "cal_labels.csv",
               "--alpha", 0.1, "--out", "c.txt") == 0
    assert run("predict", "--scores", "test_scores.csv", "--calibrator", "c.txt",
               "--out", "p.csv") == 0
    assert run("evaluate", "--predictions", "p.csv", "--labels", "test_labels.csv",
               "--out", "e.csv") == 0
    assert metrics("e.csv")["coverage"] == 1.0


def test_huge_finite_signal_does_not_saturate_coverage(work):
    # Near-one-hot rows still have a continuous top mass, so the calibrated
    # threshold splits them at 1 - alpha like any other oracle.
    synth("d", n=3000, signal=1e9)
    split_files("d", 1000)
    run("calibrate", "--scores", "cal_scores.csv", "--labels", "cal_labels.csv",
        "--alpha", 0.1, "--out", "c.txt")
    run("predict", "--scores", "test_scores.csv", "--calibrator", "c.txt", "--out", "p.csv")
    run("evaluate", "--predictions", "p.csv", "--labels", "test_labels.csv", "--out", "e.csv")
    assert 0.85 <= metrics("e.csv")["coverage"] <= 0.95


# -- calibrate / predict ------------------------------------------------------

@pytest.fixture
def data(work):
    synth("d", n=3000)
    split_files("d", 1000)
    return work


def test_calibrate_records_quantile_rank(data):
    assert run("calibrate", "--scores", "cal_scores.csv", "--labels", "cal_labels.csv",
               "--alpha", 0.1, "--variant", "aps", "--out", "c.txt") == 0
    m = formats.read_manifest("c.txt.manifest.json")
    assert m["derived"]["quantile_rank"] == 901
    assert set(m["inputs"]) == {"scores", "labels"}
    assert m["inputs"]["scores"]["sha256"] == formats.sha256_file("cal_scores.csv")
    c = load_calibrator(open("c.txt").read())
    cal = LabeledScores(formats.read_scores("cal_scores.csv"),
                        formats.read_labels("cal_labels.csv")[0])
    assert c == calibrate(cal, 0.1)


def test_alpha_one_gives_all_empty_sets(data):
    run("calibrate", "--scores", "cal_scores.csv", "--labels", "cal_labels.csv",
        "--alpha", 1, "--out", "c.txt")
    assert load_calibrator(open("c.txt").read()).q_hat == 0.0
    assert run("predict", "--scores", "test_scores.csv", "--calibrator", "c.txt",
               "--out", "p.csv") == 0
    sets, _ = formats.read_predictions("p.csv")
    assert len(sets) == 2000 and all(s.is_empty for s in sets)


def test_raps_calibrator_and_predictions_match_library(data):
    assert run("calibrate", "--scores", "cal_scores.csv", "--labels", "cal_labels.csv",
               "--alpha", 0.1, "--variant", "raps", "--lambda", 0.1, "--k-reg", 2,
               "--out", "c.txt") == 0
    c = load_calibrator(open("c.txt").read())
    assert (c.config.variant, c.config.lam, c.config.k_reg) == ("raps", 0.1, 2)
    run("predict", "--scores", "test_scores.csv", "--calibrator", "c.txt", "--out", "p.csv")
    sets, pred = formats.read_predictions("p.csv")
    scores = formats.read_scores("test_scores.csv")
    assert [s.members for s in sets] == [s.members for s in predict_sets(scores, c)]
    assert pred.tolist() == predicted_labels(scores).tolist()


@pytest.mark.parametrize("flags", [
    ("--lambda", 0.1),
    ("--k-reg", 2),
    ("--variant", "raps", "--lambda", 0.1),
    ("--variant", "raps", "--k_reg", 2),
    ("--variant", "raps", "--lambda", -0.1, "--k-reg", 2),
])
def test_scoring_flag_validation(data, capsys, flags):
    code = run("calibrate", "--scores", "cal_scores.csv", "--labels", "cal_labels.csv",
               "--alpha", 0.1, *flags, "--out", "c.txt")
    assert code == cli.EXIT_USAGE
    assert "usage error" in capsys.readouterr().err
    assert not os.path.exists("c.txt")


def test_argparse_errors_exit_two(data):
    with pytest.raises(SystemExit) as exc:
        run("calibrate", "--scores", "cal_scores.csv")
    assert exc.value.code == cli.EXIT_USAGE
    with pytest.raises(SystemExit) as exc:
        run("calibrate", "--scores", "cal_scores.csv", "--labels", "cal_labels.csv",
            "--alpha", 1.5, "--out", "c.txt")
    assert exc.value.code == cli.EXIT_USAGE


# -- evaluate -----------------------------------------------------------------

def test_evaluate_matches_library(data):
    run("calibrate", "--scores", "cal_scores.csv", "--labels", "cal_labels.csv",
        "--alpha", 0.1, "--out", "c.txt")
    run("predict", "--scores", "test_scores.csv", "--calibrator", "c.txt", "--out", "p.csv")
    assert run("evaluate", "--predictions", "p.csv", "--labels", "test_labels.csv",
               "--out", "e.csv") == 0
    got = metrics("e.csv")
    scores = formats.read_scores("test_scores.csv")
    labels, _ = formats.read_labels("test_labels.csv")
    sets = predict_sets(scores, load_calibrator(open("c.txt").read()))
    pred = predicted_labels(scores)
    assert got["coverage"] == empirical_coverage(sets, labels)
    assert got["c_average"] == set_size_stats(sets, pred, labels).c_average
    assert got["n_correct"] + got["n_wrong"] + got["excluded_empty"] == got["n"] == 2000
    meta, _, _ = formats.read_table("e.csv")
    manifest = formats.read_manifest("e.csv.manifest.json")
    assert meta["manifest_sha256"] == manifest["manifest_sha256"]


def test_evaluate_length_mismatch_is_data_error(data, capsys):
    run("calibrate", "--scores", "cal_scores.csv", "--labels", "cal_labels.csv",
        "--alpha", 0.1, "--out", "c.txt")
    run("predict", "--scores", "test_scores.csv", "--calibrator", "c.txt", "--out", "p.csv")
    code = run("evaluate", "--predictions", "p.csv", "--labels", "cal_labels.csv",
               "--out", "e.csv")
    assert code == cli.EXIT_DATA
    assert "2000 predictions but 1000 labels" in capsys.readouterr().err


# -- sweeps -------------------------------------------------------------------

def test_alpha_sweep_table(data):
    grid = ",".join(f"{a:.2f}" for a in np.arange(1, 21) * 0.05)
    assert run("sweep", "--mode", "alpha", "--scores", "d/scores.csv", "--labels",
               "d/labels.csv", "--grid", grid, "--n-calib", 1000, "--out", "s.csv") == 0
    _, cols, rows = formats.read_table("s.csv")
    assert cols == ["alpha", "certain", "uncertain", "empty", "coverage"]
    empty = [int(r[3]) for r in rows]
    assert empty == sorted(empty) and empty[-1] == 2000
    for r in rows:
        assert int(r[1]) + int(r[2]) + int(r[3]) == 2000


def test_calibsize_sweep_independent_of_jobs(data):
    args = ("sweep", "--mode", "calibsize", "--scores", "d/scores.csv", "--labels",
            "d/labels.csv", "--grid", "50,100,1000", "--alpha", 0.1, "--resamples", 20,
            "--n-test", 1000, "--seed", 3)
    assert run(*args, "--jobs", 1, "--out", "one.csv") == 0
    assert run(*args, "--jobs", 4, "--out", "four.csv") == 0
    assert read("one.csv") == read("four.csv")
    _, cols, rows = formats.read_table("one.csv")
    assert [int(r[0]) for r in rows] == [50, 100, 1000]
    assert cols[:3] == ["n_calib", "mean_coverage", "std_coverage"]


def test_sweep_mode_specific_flags(data):
    base = ("sweep", "--scores", "d/scores.csv", "--labels", "d/labels.csv")
    assert run(*base, "--mode", "alpha", "--grid", "0.1", "--out", "s.csv") == cli.EXIT_USAGE
    assert run(*base, "--mode", "calibsize", "--grid", "50", "--out", "s.csv") == cli.EXIT_USAGE
    assert run(*base, "--mode", "calibsize", "--grid", "50,2990", "--alpha", 0.1,
               "--n-test", 100, "--out", "s.csv") == cli.EXIT_DATA
    with pytest.raises(SystemExit):
        run(*base, "--mode", "calibsize", "--grid", "fifty", "--alpha", 0.1, "--out", "s.csv")


# -- compare ------------------------------------------------------------------

def test_compare_outputs(data):
    run("calibrate", "--scores", "cal_scores.csv", "--labels", "cal_labels.csv",
        "--alpha", 0.1, "--out", "c.txt")
    assert run("compare", "--scores", "test_scores.csv", "--labels", "test_labels.csv",
               "--calibrator", "c.txt", "--passes", 20, "--jitter", 0.3, "--seed", 5,
               "--out", "cmp.csv") == 0
    meta, cols, rows = formats.read_table("cmp.csv")
    assert [r[0] for r in rows] == ["cp", "mcd", "edl"]
    for r in rows:
        assert int(r[5]) + int(r[6]) + int(r[7]) == 2000
    _, hcols, hrows = formats.read_table("cmp.csv.hist.csv")
    assert len(hrows) == 10 and hcols[2:] == [
        "cp_correct", "cp_wrong", "mcd_correct", "mcd_wrong", "edl_correct", "edl_wrong"]
    counts = np.array([[int(v) for v in r[2:]] for r in hrows]).sum(axis=0)
    excluded = int(rows[0][7])
    assert counts[:2].sum() == 2000 - excluded and counts[2:4].sum() == counts[4:].sum() == 2000
    hmeta, _, srows = formats.read_table("cmp.csv.samples.csv")
    assert len(srows) == 2000 and hmeta["manifest_sha256"] == meta["manifest_sha256"]


def test_compare_stack_file_matches_simulation(data):
    run("calibrate", "--scores", "cal_scores.csv", "--labels", "cal_labels.csv",
        "--alpha", 0.1, "--out", "c.txt")
    common = ("compare", "--scores", "test_scores.csv", "--labels", "test_labels.csv",
              "--calibrator", "c.txt")
    run(*common, "--passes", 10, "--jitter", 0.2, "--seed", 1, "--out", "sim.csv")
    stacks = generate_mcd_stacks(formats.read_scores("test_scores.csv"), 10, 0.2, 1)
    formats.atomic_write("stacks.csv", formats.format_stacks(stacks))
    assert run(*common, "--mcd-stacks", "stacks.csv", "--out", "file.csv") == 0
    body = lambda p: read(p).split(b"\n", 2)[2]  # noqa: E731  (skip comment block)
    assert body("sim.csv") == body("file.csv")
    assert "mcd_stacks" in formats.read_manifest("file.csv.manifest.json")["inputs"]


# -- exit codes ---------------------------------------------------------------

def test_missing_input_is_data_error(work, capsys):
    assert run("validate", "--scores", "nope.csv") == cli.EXIT_DATA
    assert "nope.csv" in capsys.readouterr().err


def test_validate(data, capsys):
    assert run("validate", "--scores", "d/scores.csv", "--labels", "d/labels.csv") == 0
    assert "3000 rows, 7 classes" in capsys.readouterr().out
    with open("bad.csv", "w") as f:
        f.write("# k=2\n0.5,0.7\n")
    assert run("validate", "--scores", "bad.csv") == cli.EXIT_DATA
    assert "RowSumOutOfTolerance" in capsys.readouterr().err


def test_class_count_mismatch_is_data_error(data):
    with open("l3.csv", "w") as f:
        f.write("# k=3\n" + "0\n" * 1000)
    code = run("calibrate", "--scores", "cal_scores.csv", "--labels", "l3.csv",
               "--alpha", 0.1, "--out", "c.txt")
    assert code == cli.EXIT_DATA


def test_invariant_violation_exit_code(work, monkeypatch, capsys):
    real = cli.generate
    monkeypatch.setattr(cli, "generate", lambda cfg, n, jobs=None: real(cfg, n - 1))
    assert run("synth", "--k", 3, "--n", 10, "--out", "x") == cli.EXIT_INTERNAL
    assert "invariant" in capsys.readouterr().err
    assert not os.path.exists("x/scores.csv")


def test_module_entry_point(work):
    out = subprocess.run([sys.executable, "-m", "conformal_uq", "--version"],
                         capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.startswith("conformal-uq ")
    out = subprocess.run([sys.executable, "-m", "conformal_uq", "synth", "--k", "7", "--n", "5",
                          "--concentration", "0", "--out", "x"], capture_output=True, text=True)
    assert out.returncode == 2 and "concentration" in out.stderr
