import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from confrec.checkpoint import Checkpoint
from confrec.cli import main, read_config_file, resolve_settings
from confrec.data import load_adjacency_file, split
from confrec.errors import ChecksumMismatch, DimensionMismatch, InputError
from confrec.synthetic import clustered_interactions


def run(argv):
    out = io.StringIO()
    code = main([str(a) for a in argv], out=out)
    return code, out.getvalue()


def table(text):
    """Tab-separated output lines as {first field: {key: value}}."""
    rows = {}
    for line in text.splitlines():
        fields = line.split("\t")
        rows[fields[0]] = dict(zip(fields[1::2], fields[2::2]))
    return rows


@pytest.fixture(scope="module")
def toy_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "toy.txt"
    with open(path, "w") as fh:
        for u, i in clustered_interactions(0, num_users=40, num_items=60):
            fh.write(f"{u}\t{i}\n")
    return path


@pytest.fixture(scope="module")
def trained(toy_file, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    code, _ = run(["train", "--data", toy_file, "--epochs", 3, "--seed", 7, "--batch-size", 32,
                   "--out", out])
    assert code == 0
    return out / "checkpoint.bin"


def single_user_checkpoint(tmp_path, scale=1e7):
    """One user, ten items, L = 0: the lowest-index test item outranks everything by far."""
    data = tmp_path / "one.txt"
    data.write_text("alice " + " ".join(f"i{k}" for k in range(10)) + "\n")
    ds = split(load_adjacency_file(data), 0)
    target = int(ds.test[:, 1].min())
    item_emb = np.full((10, 1), -scale)
    item_emb[target] = scale
    ckpt = Checkpoint(np.array([[scale]]), item_emb, 0, {"data": str(data), "seed": 0})
    path = tmp_path / "one.bin"
    ckpt.write(path)
    return path


def test_train_is_deterministic(toy_file, tmp_path):
    for name in ("a", "b"):
        code, _ = run(["train", "--data", toy_file, "--epochs", 1, "--seed", 7,
                       "--out", tmp_path / name])
        assert code == 0
    assert (tmp_path / "a/checkpoint.bin").read_bytes() == (tmp_path / "b/checkpoint.bin").read_bytes()


def test_train_log_records(toy_file, tmp_path):
    code, _ = run(["train", "--data", toy_file, "--epochs", 2, "--conf-weight", 0, "--out", tmp_path])
    assert code == 0
    records = [json.loads(line) for line in (tmp_path / "train_log.jsonl").read_text().splitlines()]
    assert [r["epoch"] for r in records] == [0, 1]
    assert all(r["conf"] == 0.0 for r in records)
    assert {"bpr", "conf", "l2", "wall_time"} <= set(records[0])


def test_missing_file_exit_1(tmp_path, capsys):
    missing = tmp_path / "nope.txt"
    code, _ = run(["train", "--data", missing, "--out", tmp_path])
    assert code == 1
    assert str(missing) in capsys.readouterr().err


def test_parse_error_exit_1(tmp_path, capsys):
    bad = tmp_path / "bad.txt"
    bad.write_text("u1\ti1\nu2\ti2\textra\n")
    code, _ = run(["train", "--data", bad, "--out", tmp_path])
    assert code == 1
    assert ":2" in capsys.readouterr().err


def test_divergence_exit_2(toy_file, tmp_path, capsys):
    code, _ = run(["train", "--data", toy_file, "--epochs", 2, "--lr", 1e200, "--out", tmp_path])
    assert code == 2
    assert "non-finite" in capsys.readouterr().err


def test_usage_error_exit_1():
    assert run(["bogus"])[0] == 1
    assert run(["train", "--epochs", "many"])[0] == 1


def test_evaluate_calibration_keeps_ranking(trained):
    code, text = run(["evaluate", trained, "--calibrate"])
    assert code == 0
    rows = table(text)
    assert rows["raw"]["precision@20"] == rows["calibrated"]["precision@20"]
    assert rows["raw"]["accuracy@20"] == rows["calibrated"]["accuracy@20"]
    assert len(rows["raw"]["precision@20"].split(".")[1]) == 3


def test_evaluate_output_independent_of_threads(trained):
    assert run(["evaluate", trained, "--calibrate"]) == run(["evaluate", trained, "--calibrate",
                                                            "--threads", 3])


def test_evaluate_precision_at_1(tmp_path):
    code, text = run(["evaluate", single_user_checkpoint(tmp_path), "--topn", 1])
    assert code == 0
    assert table(text)["raw"]["precision@1"] == "100.000"


def test_corrupt_checkpoint(trained, tmp_path, capsys):
    data = bytearray(trained.read_bytes())
    data[-1] ^= 0xFF
    bad = tmp_path / "bad.bin"
    bad.write_bytes(bytes(data))
    with pytest.raises(ChecksumMismatch):
        Checkpoint.read(bad)
    assert run(["evaluate", bad])[0] == 1
    assert "checksum" in capsys.readouterr().err


def test_reliability_perfectly_calibrated(tmp_path):
    code, text = run(["reliability", single_user_checkpoint(tmp_path), "--topn", 1,
                      "--out", tmp_path / "rel"])
    assert code == 0
    rows = table(text)
    assert abs(float(rows["raw"]["ece"])) <= 1e-12
    assert abs(float(rows["calibrated"]["ece"])) <= 1e-12


def test_reliability_csv_files(trained, tmp_path):
    code, text = run(["reliability", trained, "--out", tmp_path, "--tau", 0.5])
    assert code == 0
    for name in ("raw", "calibrated"):
        lines = (tmp_path / f"reliability_{name}.csv").read_text().splitlines()
        assert lines[0] == "bin_lo,bin_hi,count,mean_confidence,accuracy"
        assert len(lines) - 1 <= 10 + 1
        assert lines[-1].startswith("ece,")
        assert float(lines[-1].split(",")[1]) == float(table(text)[name]["ece"])
    assert text.splitlines()[-1] == "tau\t0.5"


def test_reliability_user_mean_mode(trained, tmp_path):
    code, _ = run(["reliability", trained, "--out", tmp_path, "--reliability-mode", "user-mean"])
    assert code == 0


def test_tune_tau(trained):
    code, text = run(["tune-tau", trained, "--tau-grid", "0.7"])
    assert code == 0
    assert text.splitlines()[-1] == "best_tau\t0.7"
    code, text = run(["tune-tau", trained])
    values = {float(line.split("\t")[1]): float(line.split("\t")[3])
              for line in text.splitlines() if line.startswith("tau\t")}
    best = float(text.splitlines()[-1].split("\t")[1])
    assert set(values) == {0.25, 0.5, 1.0, 2.0}
    assert values[best] == min(values.values())


def test_split_export(toy_file, tmp_path):
    code, text = run(["split-export", "--data", toy_file, "--seed", 3, "--out", tmp_path])
    assert code == 0
    assert text.split() == [str(tmp_path / f"{n}.txt") for n in ("train", "valid", "test")]
    ds = split(load_adjacency_file(toy_file), 3)
    assert len((tmp_path / "test.txt").read_text().splitlines()) == len(ds.test)


def test_config_file_and_precedence(tmp_path, monkeypatch):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# settings\nepochs = 5\nbatch-size = 64  # comment\nseed = 3\n")
    assert read_config_file(cfg) == {"epochs": 5, "batch_size": 64, "seed": 3}
    resolved = resolve_settings({"config": str(cfg), "epochs": 9})
    assert resolved["epochs"] == 9 and resolved["batch_size"] == 64 and resolved["seed"] == 3
    monkeypatch.setenv("CONF_REC_SEED", "11")
    assert resolve_settings({})["seed"] == 11
    assert resolve_settings({"seed": 2})["seed"] == 2
    assert resolve_settings({"config": str(cfg)})["seed"] == 3


def test_config_file_errors(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("learning_rate = 0.1\n")
    with pytest.raises(InputError):
        read_config_file(cfg)
    cfg.write_text("epochs 5\n")
    with pytest.raises(InputError):
        read_config_file(cfg)
    cfg.write_text("epochs = five\n")
    with pytest.raises(InputError):
        read_config_file(cfg)


def test_env_seed_changes_split(toy_file, tmp_path, monkeypatch):
    monkeypatch.setenv("CONF_REC_SEED", "5")
    run(["split-export", "--data", toy_file, "--out", tmp_path / "env"])
    run(["split-export", "--data", toy_file, "--seed", 5, "--out", tmp_path / "flag"])
    assert (tmp_path / "env/test.txt").read_bytes() == (tmp_path / "flag/test.txt").read_bytes()


def test_checkpoint_round_trip(trained, tmp_path):
    again = tmp_path / "again.bin"
    Checkpoint.read(trained).write(again)
    assert again.read_bytes() == trained.read_bytes()


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 5), st.integers(0, 4),
       st.dictionaries(st.text(max_size=5), st.integers() | st.floats(allow_nan=False) | st.text(),
                       max_size=4),
       st.data())
def test_checkpoint_bytes_round_trip(n, m, d, layers, config, data):
    floats = st.floats(width=32, allow_nan=False)
    user = data.draw(arrays(np.float32, (n, d), elements=floats))
    item = data.draw(arrays(np.float32, (m, d), elements=floats))
    blob = Checkpoint(user, item, layers, config).to_bytes()
    back = Checkpoint.from_bytes(blob)
    assert back.dims == (n, m, d, layers)
    assert back.config == config
    assert np.array_equal(back.user_emb, user) and np.array_equal(back.item_emb, item)
    assert back.to_bytes() == blob


def test_checkpoint_layout_little_endian():
    blob = Checkpoint(np.array([[1.0]]), np.array([[2.0], [-0.5]]), 2, {}).to_bytes()
    assert blob[:4] == b"CREC"
    assert blob[-8 - 12:-8] == np.array([1.0, 2.0, -0.5], dtype="<f4").tobytes()


def test_checkpoint_length_checks():
    blob = Checkpoint(np.zeros((2, 2)), np.zeros((3, 2)), 1, {}).to_bytes()
    with pytest.raises(InputError):
        Checkpoint.from_bytes(blob[:10])
    with pytest.raises(DimensionMismatch):
        Checkpoint(np.zeros((2, 2)), np.zeros((3, 3)), 1)


def test_checkpoint_dataset_mismatch(trained, tmp_path):
    other = tmp_path / "other.txt"
    other.write_text("a\tb\nc\td\n")
    assert run(["evaluate", trained, "--data", other])[0] == 1
