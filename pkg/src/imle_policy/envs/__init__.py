"""Synthetic multimodal tasks with scripted demonstrators."""

from __future__ import annotations

import warnings

import numpy as np

from ..imle_core import Demo
from . import pushlite, toy
from .pushlite import Episode, PushLiteParams, PushLiteState, pushlite_step
from .toy import ToyBranchSpec, gen_toy_branch_dataset

TASKS = ("toy", "pushlite")

__all__ = [
    "TASKS", "Episode", "PushLiteParams", "PushLiteState", "ToyBranchSpec",
    "episodes_to_demos", "gen_toy_branch_dataset", "pushlite", "pushlite_step",
    "scripted_demonstrator", "success", "toy",
]


def scripted_demonstrator(task: str, mode_choice: str, rng: np.random.Generator, jitter: float | None = None,
                          state: PushLiteState | None = None, noise_std: float = 0.01) -> Episode:
    """One demonstration following ``mode_choice``.

    pushlite: a full pushing episode from ``state`` (or a random reset).
    toy: a single (x, y) step on the named branch, x drawn from the branch's region.
    """
    if task == "pushlite":
        if state is None:
            state = pushlite.reset(rng)
        return pushlite.run_demonstrator(state, mode_choice, rng, 0.002 if jitter is None else jitter)
    if task == "toy":
        if mode_choice == toy.TRUNK:
            x = rng.uniform(-1.0, 0.0)
        elif mode_choice in toy.MODES:
            x = rng.uniform(0.0, 1.0)
            while x == 0.0:
                x = rng.uniform(0.0, 1.0)
        else:
            raise ValueError(f"unknown toy mode {mode_choice!r}")
        y = toy.sample_point(x, mode_choice, noise_std if jitter is None else jitter, rng)
        return Episode(np.array([[x]]), np.array([[y]]), mode_choice, True)
    raise ValueError(f"unknown task {task!r}")


def success(task: str, state, noise_std: float = 0.01) -> bool:
    """pushlite: ``state`` is a PushLiteState. toy: ``state`` is an (x, y) pair."""
    if task == "pushlite":
        return pushlite.success(state)
    if task == "toy":
        x, y = state
        return toy.success(x, y, noise_std)
    raise ValueError(f"unknown task {task!r}")


def episode_windows(length: int, pred_horizon: int, action_horizon: int) -> int:
    """Number of windows :func:`episodes_to_demos` cuts from one episode."""
    if length < pred_horizon:
        return 0
    return length - pred_horizon + 1 + (action_horizon - 1)


def episodes_to_demos(episodes: list[Episode], obs_horizon: int, pred_horizon: int, action_horizon: int):
    """Sliding windows of (T_o past observations, next T_p actions), stride 1.

    Observations before the episode start repeat the first frame. Windows
    run past the last full action block by ``T_a - 1`` starts; their action
    tail repeats the final action. Returns ``(demos, episode_index)``.
    """
    demos, index = [], []
    for k, ep in enumerate(episodes):
        L = len(ep)
        if L < pred_horizon:
            warnings.warn(f"episode {k} has {L} steps, fewer than T_p={pred_horizon}; skipped")
            continue
        n = episode_windows(L, pred_horizon, action_horizon)
        for t in range(n):
            o_idx = np.clip(np.arange(t - obs_horizon + 1, t + 1), 0, L - 1)
            a_idx = np.minimum(np.arange(t, t + pred_horizon), L - 1)
            demos.append(Demo(ep.observations[o_idx].ravel(), ep.actions[a_idx].copy()))
            index.append(k)
    return demos, index
