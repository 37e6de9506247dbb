"""Dataset construction, training and evaluation shared by the CLI and tests."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import envs
from .baseline_fm import new_velocity_net, train_fm
from .config import RunConfig
from .envs import pushlite, toy
from .imle_core import Demo, make_rng, new_generator, train
from .metrics import (
    LatencyReport,
    ModeReport,
    PolicyController,
    bench_latency,
    mode_coverage,
    rollout_success_rate,
)
from .policy import Normalizer, Policy
from .storage import load_checkpoint, load_dataset, save_checkpoint, save_dataset

log = logging.getLogger(__name__)


@dataclass
class Dataset:
    task: str
    observations: np.ndarray  # [N, T_o * obs_dim], raw
    actions: np.ndarray  # [N, T_p, action_dim], raw
    normalizer: Normalizer
    obs_horizon: int
    labels: list[str]
    episode_index: list[int]
    episode_modes: list[str]
    info: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.actions)

    @property
    def n_episodes(self) -> int:
        return len(self.episode_modes)

    def demos(self, indices=None) -> list[Demo]:
        idx = range(len(self)) if indices is None else indices
        T_o = self.obs_horizon
        out = []
        for i in idx:
            o = self.normalizer.normalize_obs(self.observations[i].reshape(T_o, -1)).ravel()
            out.append(Demo(o, self.normalizer.normalize_actions(self.actions[i])))
        return out

    def episode_subset(self, fraction: float, seed: int) -> np.ndarray:
        """Demo indices from the first ``fraction`` of episodes in a fixed shuffled order.

        Smaller fractions are always subsets of larger ones for the same seed.
        """
        order = make_rng(seed, "subset").permutation(self.n_episodes)
        keep = set(order[:max(1, round(fraction * self.n_episodes))].tolist())
        return np.array([i for i, e in enumerate(self.episode_index) if e in keep], dtype=int)

    def header(self) -> dict:
        return {
            "task": self.task, "obs_horizon": self.obs_horizon, "normalizer": self.normalizer.to_dict(),
            "labels": self.labels, "episode_index": self.episode_index, "episode_modes": self.episode_modes,
            "info": self.info,
        }

    def save(self, path):
        save_dataset(path, self.header(), self.observations, self.actions)

    @classmethod
    def load(cls, path) -> Dataset:
        h, obs, acts = load_dataset(path)
        return cls(h["task"], obs, acts, Normalizer.from_dict(h["normalizer"]), h["obs_horizon"],
                   h["labels"], h["episode_index"], h["episode_modes"], h.get("info", {}))


def build_dataset(cfg: RunConfig) -> Dataset:
    t = cfg.train
    horizons = {"obs": t.obs_horizon, "pred": t.pred_horizon, "action": t.action_horizon}
    if cfg.task == "toy":
        spec = toy.ToyBranchSpec(cfg.n_demos, cfg.weights, cfg.noise_std, cfg.seed, t.obs_horizon, t.pred_horizon)
        demos, labels = toy.gen_toy_branch_dataset(spec)
        obs = np.stack([d.observation for d in demos])
        acts = np.stack([d.actions for d in demos])
        norm = Normalizer.fit(obs[:, :1], acts[:, 0, :])
        info = {"spec": {"n_demos": spec.n_demos, "weights": list(spec.weights), "noise_std": spec.noise_std,
                         "seed": spec.seed}, "horizons": horizons}
        return Dataset("toy", obs, acts, norm, t.obs_horizon, labels, list(range(len(demos))), labels, info)

    episodes = pushlite_episodes(cfg.n_demos, cfg.seed, cfg.jitter)
    demos, index = envs.episodes_to_demos(episodes, t.obs_horizon, t.pred_horizon, t.action_horizon)
    frames = np.concatenate([e.observations for e in episodes])
    norm = Normalizer.fit(frames, np.concatenate([e.actions for e in episodes]))
    modes = [e.mode for e in episodes]
    info = {"spec": {"n_episodes": len(episodes), "jitter": cfg.jitter, "seed": cfg.seed,
                     "episode_lengths": [len(e) for e in episodes]}, "horizons": horizons}
    return Dataset("pushlite", np.stack([d.observation for d in demos]), np.stack([d.actions for d in demos]),
                   norm, t.obs_horizon, [modes[i] for i in index], index, modes, info)


def pushlite_episodes(n: int, seed: int, jitter: float = 0.002) -> list:
    """``n`` scripted episodes split evenly between left and right detours."""
    modes = np.array([pushlite.MODES[i % 2] for i in range(n)])
    modes = modes[make_rng(seed, "modes").permutation(n)]
    episodes = []
    for i, mode in enumerate(modes):
        rng = make_rng(seed, "demo", i)
        episodes.append(envs.scripted_demonstrator("pushlite", str(mode), rng, jitter=jitter))
    return episodes


# -- training ----------------------------------------------------------------

def make_policy(cfg: RunConfig, net, normalizer: Normalizer) -> Policy:
    return Policy(net, normalizer, cfg.train.obs_horizon, cfg.train.action_horizon, fm_steps=cfg.sample_steps)


def checkpoint_meta(cfg: RunConfig, normalizer: Normalizer, epoch: int) -> dict:
    t = cfg.train
    return {
        "task": cfg.task, "method": cfg.method, "epoch": epoch, "seed": cfg.seed,
        "horizons": {"obs": t.obs_horizon, "pred": t.pred_horizon, "action": t.action_horizon},
        "fm_steps": cfg.sample_steps, "normalizer": normalizer.to_dict(),
    }


def train_method(cfg: RunConfig, ds: Dataset, indices=None, on_epoch_end=None):
    """Train ``cfg.method`` on (a subset of) ``ds``; returns (Policy, TrainingReport)."""
    demos = ds.demos(indices)
    if cfg.is_flow:
        net, report = train_fm(demos, cfg.train, on_epoch_end=on_epoch_end)
    else:
        net, report = train(demos, cfg.train, on_epoch_end=on_epoch_end)
    return make_policy(cfg, net, ds.normalizer), report


def fresh_policy(cfg: RunConfig, ds: Dataset) -> Policy:
    obs_size = ds.observations.shape[1]
    T_p, ad = ds.actions.shape[1:]
    net = new_velocity_net(obs_size, T_p, ad, cfg.train) if cfg.is_flow else new_generator(obs_size, T_p, ad, cfg.train)
    return make_policy(cfg, net, ds.normalizer)


def save_policy(path, cfg: RunConfig, policy: Policy, epoch: int):
    save_checkpoint(path, policy.net, checkpoint_meta(cfg, policy.normalizer, epoch))


def load_policy(path) -> tuple[Policy, dict]:
    net, h = load_checkpoint(path)
    hz = h["horizons"]
    return Policy(net, Normalizer.from_dict(h["normalizer"]), hz["obs"], hz["action"], h.get("fm_steps", 1)), h


# -- evaluation --------------------------------------------------------------

def evaluate(cfg: RunConfig, policy: Policy, seed: int | None = None):
    seed = cfg.seed if seed is None else seed
    if cfg.task == "toy":
        return rollout_success_rate(policy, "toy", cfg.n_episodes, cfg.max_steps, seed, cfg.noise_std)
    ctrl = PolicyController(policy, cfg.inference_for_method())
    return rollout_success_rate(ctrl, "pushlite", cfg.n_episodes, cfg.max_steps, seed)


SWEEP_HEADER = ("method", "fraction", "n_episodes", "n_windows", "final_loss", "success_rate")


def sweep(cfg: RunConfig, fractions, methods=("imle", "fm1"), ds: Dataset | None = None):
    """Train every method on nested subsets and record the rollout success rate."""
    fractions = [float(f) for f in fractions]
    if any(not 0 < f <= 1 for f in fractions) or fractions != sorted(fractions):
        raise ValueError("fractions must be ascending values in (0, 1]")
    ds = build_dataset(cfg) if ds is None else ds
    rows = []
    for method in methods:
        mcfg = cfg.with_(method=method)
        for f in fractions:
            idx = ds.episode_subset(f, cfg.seed)
            policy, report = train_method(mcfg, ds, idx)
            rate, _ = evaluate(mcfg, policy)
            n_ep = len({ds.episode_index[i] for i in idx})
            rows.append((method, f, n_ep, len(idx), report.final_loss, rate))
            log.info("sweep %s fraction=%.2f success=%.2f", method, f, rate)
    return rows


def smallest_fraction(rows, method: str, threshold: float = 0.5) -> float:
    hits = [r[1] for r in rows if r[0] == method and r[5] >= threshold]
    return min(hits) if hits else math.inf


MODE_HEADER = ("condition", "samples", "label_counts", "recall", "collapse", "nn_distance")


def pushlite_probe_state(offset: float) -> pushlite.PushLiteState:
    """Block fixed below the target, effector ``offset`` along its top edge."""
    p = pushlite.DEFAULT
    block = np.array([0.5, 0.3])
    effector = np.array([0.5 + offset, block[1] + p.block_half + p.effector_radius + 0.03])
    return pushlite.PushLiteState(effector, block, 0.0, np.array(p.target))


def eval_modes(cfg: RunConfig, policy: Policy, grid, n_samples: int | None = None) -> list[tuple[float, ModeReport]]:
    n = cfg.eval_samples if n_samples is None else n_samples
    out = []
    for k, c in enumerate(grid):
        rng = make_rng(cfg.seed, "eval-modes", k)
        if cfg.task == "toy":
            window = np.full((policy.obs_horizon, 1), float(c))
            ys = policy.generate_batch(window, n, rng).mean(axis=(1, 2))
            branches = toy.branch_values(float(c))
            rep = mode_coverage(ys, lambda y, x=float(c): toy.classify(x, y), cfg.min_fraction,
                                modes=tuple(branches), reference=np.array(list(branches.values())))
        else:
            state = pushlite_probe_state(float(c))
            obs = pushlite.observe(state)
            window = np.repeat(obs[None], policy.obs_horizon, axis=0)
            plans = policy.generate_batch(window, n, rng)
            T_p = plans.shape[1]
            ref = []
            for mode in pushlite.MODES:
                ep = pushlite.run_demonstrator(state.copy(), mode, jitter=0.0)
                idx = np.minimum(np.arange(T_p), len(ep) - 1)
                ref.append(ep.actions[idx])
            rep = mode_coverage(plans, lambda a, o=obs: pushlite.classify_plan(o, a), cfg.min_fraction,
                                modes=pushlite.MODES, reference=np.array(ref))
        out.append((float(c), rep))
    return out


def mode_rows(results):
    for c, r in results:
        counts = ";".join(f"{k}:{v}" for k, v in r.counts.items())
        yield (repr(c), r.total, counts, repr(r.recall), int(r.collapse), repr(r.nn_distance))


BENCH_HEADER = ("method", "k_inner_steps", "runs", "mean_ms", "std_ms", "hz")


def bench(policies: dict[str, Policy], window: np.ndarray, runs: int = 30, seed: int = 0) -> dict[str, LatencyReport]:
    """Time one action-sequence generation per call for each named policy."""
    out = {}
    for name, pol in policies.items():
        rng = make_rng(seed, "bench", len(out))
        k = pol.fm_steps if pol.is_flow else 1
        out[name] = bench_latency(lambda p=pol, r=rng: p.generate_batch(window, 1, r), k, runs)
    return out


def probe_window(cfg: RunConfig) -> np.ndarray:
    if cfg.task == "toy":
        return np.full((cfg.train.obs_horizon, 1), 0.5)
    obs = pushlite.observe(pushlite_probe_state(0.0))
    return np.repeat(obs[None], cfg.train.obs_horizon, axis=0)
