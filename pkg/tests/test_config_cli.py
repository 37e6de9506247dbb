import csv
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from imle_policy import envs
from imle_policy import experiments as ex
from imle_policy.cli import main
from imle_policy.config import METHODS, ConfigError, RunConfig
from imle_policy.imle_core import new_generator
from imle_policy.policy import InferenceConfig
from imle_policy.storage import (
    FormatError,
    load_checkpoint,
    load_dataset,
    save_checkpoint,
)
from imle_policy.tensor_nn import init_net

# -- config ------------------------------------------------------------------------

@st.composite
def configs(draw):
    m = draw(st.integers(1, 64))
    w = draw(st.floats(0, 1))
    cfg = RunConfig.for_task(
        draw(st.sampled_from(["toy", "pushlite"])),
        method=draw(st.sampled_from(METHODS)),
        seed=draw(st.integers(0, 2**31)),
        n_demos=draw(st.integers(2, 500)),
        fraction=draw(st.floats(0.01, 1.0)),
        weights=(w, 1 - w),
        noise_std=draw(st.floats(0.001, 0.1)),
        train=dict(epsilon=draw(st.floats(0, 1)), num_latents=m, epochs=draw(st.integers(0, 5000)),
                   hidden=draw(st.lists(st.integers(1, 256), min_size=1, max_size=3))),
    )
    inf = InferenceConfig(num_candidates=m, reset_period=draw(st.integers(1, 20)),
                          consistency_enabled=draw(st.booleans()))
    return cfg.with_(inference=inf)


@given(configs())
def test_ini_round_trip(cfg):
    again = RunConfig.from_ini(cfg.to_ini())
    assert again == cfg
    assert again.to_ini() == cfg.to_ini()


def test_digest_ignores_output_dir():
    cfg = RunConfig.for_task("toy")
    assert cfg.digest() == cfg.with_(out="/elsewhere").digest()
    assert cfg.digest() != cfg.with_(seed=1).digest()


@pytest.mark.parametrize("text", [
    "[run]\ntask = toy\nmethod = nope\n",
    "[run]\ntask = maze\n",
    "[run]\nfraction = 0\n",
    "[train]\nbogus = 1\n",
    "[extra]\nx = 1\n",
    "[train]\nepochs = many\n",
    "not an ini file",
    "[inference]\nconsistency_enabled = maybe\n",
    "[train]\npred_horizon = 16\naction_horizon = 4\n",
])
def test_malformed_config_rejected(text):
    with pytest.raises(ConfigError):
        RunConfig.from_ini(text)


def test_flow_methods_draw_one_sample():
    cfg = RunConfig.for_task("pushlite", method="fm1")
    inf = cfg.inference_for_method()
    assert inf.num_candidates == 1 and not inf.consistency_enabled
    assert not RunConfig.for_task("pushlite", method="imle_no_consistency").inference_for_method().consistency_enabled


# -- storage -----------------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    net = init_net([5, 7, 6], (3, 2), np.random.default_rng(0))
    save_checkpoint(tmp_path / "a.ckpt", net, {"task": "toy", "horizons": {"obs": 1}})
    back, header = load_checkpoint(tmp_path / "a.ckpt")
    assert header["kind"] == "imle" and header["layer_sizes"] == [5, 7, 6]
    assert all(np.array_equal(a, b) for a, b in zip(net.params(), back.params()))
    raw = (tmp_path / "a.ckpt").read_bytes()
    assert raw[:8] == b"IMLEv1\x00\x00"
    # the payload is the parameters in order, little-endian float64
    payload = np.frombuffer(raw[-8 * net.num_params():], dtype="<f8")
    assert np.array_equal(payload, np.concatenate([p.ravel() for p in net.params()]))


def test_checkpoint_bad_magic_and_truncation(tmp_path):
    net = init_net([2, 2], (2, 1), np.random.default_rng(0))
    path = tmp_path / "a.ckpt"
    save_checkpoint(path, net, {})
    raw = path.read_bytes()
    (tmp_path / "bad.ckpt").write_bytes(b"XXXXXXXX" + raw[8:])
    with pytest.raises(FormatError, match="magic"):
        load_checkpoint(tmp_path / "bad.ckpt")
    (tmp_path / "short.ckpt").write_bytes(raw[:-8])
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "short.ckpt")


# -- CLI ---------------------------------------------------------------------------

def _csv(path):
    with open(path, newline="") as f:
        return list(csv.reader(f))


def test_unknown_method_exits_2(tmp_path):
    assert main(["train", "--task", "toy", "--method", "unknown", "--out", str(tmp_path)]) == 2


def test_malformed_config_file_exits_2(tmp_path):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[train]\nepochs = -3\n")
    assert main(["gen-data", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    assert main(["gen-data", "--config", str(tmp_path / "missing.ini")]) == 2


def test_usage_error_exits_2():
    with pytest.raises(SystemExit) as e:
        main(["no-such-command"])
    assert e.value.code == 2


def test_missing_dataset_exits_1(tmp_path, capsys):
    assert main(["train", "--task", "toy", "--out", str(tmp_path)]) == 1
    assert "gen-data" in capsys.readouterr().err


def test_gen_data_toy(tmp_path):
    assert main(["gen-data", "--task", "toy", "--n-demos", "20", "--out", str(tmp_path / "a")]) == 0
    assert main(["gen-data", "--task", "toy", "--n-demos", "20", "--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "dataset.bin").read_bytes()
    assert a == (tmp_path / "b" / "dataset.bin").read_bytes()
    _, obs, acts = load_dataset(tmp_path / "a" / "dataset.bin")
    assert obs.shape == (20, 1) and acts.shape == (20, 16, 1)
    summary = (tmp_path / "a" / "dataset_summary.txt").read_text()
    assert "mode counts:" in summary and "episodes: 20" in summary


def test_gen_data_pushlite_35(tmp_path):
    assert main(["gen-data", "--task", "pushlite", "--n-demos", "35", "--out", str(tmp_path)]) == 0
    ds = ex.Dataset.load(tmp_path / "dataset.bin")
    lengths = ds.info["spec"]["episode_lengths"]
    assert ds.n_episodes == 35 and len(lengths) == 35
    assert len(ds) == sum(envs.episode_windows(L, 16, 8) for L in lengths)
    assert sorted(set(ds.episode_modes)) == ["left", "right"]


def test_train_zero_epochs_saves_initialization(tmp_path):
    out = str(tmp_path)
    assert main(["gen-data", "--task", "toy", "--out", out]) == 0
    assert main(["train", "--task", "toy", "--epochs", "0", "--out", out]) == 0
    net, header = load_checkpoint(tmp_path / "model_imle_s0.ckpt")
    cfg = RunConfig.for_task("toy")
    ref = new_generator(1, 16, 1, cfg.train)
    assert all(np.array_equal(a, b) for a, b in zip(ref.params(), net.params()))
    assert header["epoch"] == 0 and header["task"] == "toy"


def test_train_toy_final_loss(tmp_path):
    out = str(tmp_path)
    assert main(["gen-data", "--task", "toy", "--out", out]) == 0
    assert main(["train", "--task", "toy", "--out", out]) == 0
    rows = _csv(next(tmp_path.glob("train_imle_*_s0.csv")))
    assert rows[0] == ["epoch", "mean_loss", "mean_rejection_fraction", "fallback_count", "wall_ms"]
    assert len(rows) == 4001
    assert float(rows[-1][1]) < 0.1
    # cadence of 50 epochs, the final one is the unsuffixed checkpoint
    assert len(list(tmp_path.glob("model_imle_s0_e*.ckpt"))) == 79


def test_diverging_train_exits_1(tmp_path, capsys):
    cfg = RunConfig.for_task("toy", out=str(tmp_path))
    cfg = cfg.with_(train=replace(cfg.train, lr=1e300, epochs=20))
    ini = tmp_path / "run.ini"
    ini.write_text(cfg.to_ini())
    assert main(["gen-data", "--config", str(ini)]) == 0
    with np.errstate(all="ignore"):
        assert main(["train", "--config", str(ini)]) == 1
    assert "diverged" in capsys.readouterr().err


def test_rollout_eval_bench_outputs(tmp_path):
    out = str(tmp_path)
    assert main(["gen-data", "--task", "pushlite", "--n-demos", "4", "--out", out]) == 0
    assert main(["train", "--task", "pushlite", "--epochs", "2", "--out", out]) == 0
    cfg = RunConfig.for_task("pushlite", out=out)
    ini = tmp_path / "run.ini"
    ini.write_text(replace(cfg, n_episodes=2).with_(train=replace(cfg.train, epochs=2)).to_ini())
    assert main(["rollout", "--config", str(ini)]) == 0
    rollout = _csv(next(tmp_path.glob("rollout_imle_*.csv")))
    assert rollout[0] == ["episode", "t", "reset_flag", "j_star", "overlap_distance", "action_x", "action_y"]
    assert rollout[1][2] == "1" and rollout[1][4] == ""
    assert main(["eval-modes", "--config", str(ini), "--grid=-0.02,0.0,0.02"]) == 0
    modes = _csv(next(tmp_path.glob("modes_imle_*.csv")))
    assert len(modes) == 4 and modes[1][1] == "200"
    assert main(["bench", "--config", str(ini)]) == 0
    bench = _csv(next(tmp_path.glob("bench_imle_*.csv")))
    assert [r[0] for r in bench[1:]] == ["imle", "fm1", "fm100"]
    assert all(r[2] == "30" for r in bench[1:])


def test_rollout_rejects_other_task_checkpoint(tmp_path):
    out = str(tmp_path)
    assert main(["gen-data", "--task", "toy", "--out", out]) == 0
    assert main(["train", "--task", "toy", "--epochs", "1", "--out", out]) == 0
    ckpt = str(tmp_path / "model_imle_s0.ckpt")
    assert main(["rollout", "--task", "pushlite", "--checkpoint", ckpt, "--out", out]) == 1
