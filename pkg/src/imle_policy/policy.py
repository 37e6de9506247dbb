"""Receding-horizon policy wrapper with batched temporal-consistency selection."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .baseline_fm import VelocityNet, fm_sample_batch
from .imle_core import sample_latents
from .tensor_nn import GeneratorNet, forward_batch


@dataclass
class Normalizer:
    """Per-dimension affine map of observations and actions onto [-1, 1]."""

    obs_min: np.ndarray
    obs_max: np.ndarray
    act_min: np.ndarray
    act_max: np.ndarray

    def __post_init__(self):
        for name in ("obs_min", "obs_max", "act_min", "act_max"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64).copy())
        if np.any(self.obs_max <= self.obs_min) or np.any(self.act_max <= self.act_min):
            raise ValueError("normalizer needs max > min in every dimension")
        # precomputed scales for the inference hot path
        self._obs_scale = 2.0 / (self.obs_max - self.obs_min)
        self._act_scale = 2.0 / (self.act_max - self.act_min)

    @staticmethod
    def _range(x: np.ndarray):
        lo, hi = x.min(axis=0), x.max(axis=0)
        flat = (hi - lo) < 1e-8
        # constant dimensions get a unit half-width so they map to 0
        return np.where(flat, lo - 1.0, lo), np.where(flat, hi + 1.0, hi)

    @classmethod
    def fit(cls, observations: np.ndarray, actions: np.ndarray) -> Normalizer:
        """``observations`` [N, obs_dim] single frames, ``actions`` [N, action_dim]."""
        o_lo, o_hi = cls._range(np.asarray(observations, dtype=np.float64))
        a_lo, a_hi = cls._range(np.asarray(actions, dtype=np.float64))
        return cls(o_lo, o_hi, a_lo, a_hi)

    def normalize_obs(self, obs):
        """Works on any array whose last axis is obs_dim."""
        return (np.asarray(obs, dtype=np.float64) - self.obs_min) * self._obs_scale - 1.0

    def denormalize_obs(self, obs):
        return (np.asarray(obs, dtype=np.float64) + 1.0) / self._obs_scale + self.obs_min

    def normalize_actions(self, act):
        return (np.asarray(act, dtype=np.float64) - self.act_min) * self._act_scale - 1.0

    def denormalize_actions(self, act):
        return (np.asarray(act, dtype=np.float64) + 1.0) / self._act_scale + self.act_min

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("obs_min", "obs_max", "act_min", "act_max")}

    @classmethod
    def from_dict(cls, d: dict) -> Normalizer:
        return cls(**{k: np.array(d[k], dtype=np.float64) for k in ("obs_min", "obs_max", "act_min", "act_max")})


@dataclass
class InferenceConfig:
    num_candidates: int = 20
    reset_period: int = 10
    consistency_enabled: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.num_candidates < 1:
            raise ValueError("num_candidates must be >= 1")
        if self.reset_period < 1:
            raise ValueError("reset_period must be >= 1")


@dataclass
class HorizonBuffer:
    obs_horizon: int
    frames: deque = field(default_factory=deque)
    a_prev: np.ndarray | None = None
    steps_since_reset: int = 0

    @classmethod
    def start(cls, first_obs, obs_horizon: int) -> HorizonBuffer:
        """New episode; frames before the start repeat the first observation."""
        first = np.asarray(first_obs, dtype=np.float64)
        return cls(obs_horizon, deque([first.copy() for _ in range(obs_horizon)], maxlen=obs_horizon))

    def push(self, obs):
        self.frames.append(np.asarray(obs, dtype=np.float64).copy())

    def window(self) -> np.ndarray:
        if len(self.frames) != self.obs_horizon:
            raise ValueError(f"buffer holds {len(self.frames)} frames, need {self.obs_horizon}")
        return np.stack(self.frames)


class Policy:
    """A trained network bundled with its normalizer and horizons.

    ``generate_batch`` returns denormalized candidates [m, T_p, action_dim].
    IMLE nets take one forward pass; velocity nets are Euler-integrated
    for ``fm_steps`` steps.
    """

    def __init__(self, net: GeneratorNet, normalizer: Normalizer, obs_horizon: int, action_horizon: int,
                 fm_steps: int = 1):
        self.net = net
        self.normalizer = normalizer
        self.obs_horizon = obs_horizon
        self.action_horizon = action_horizon
        self.fm_steps = fm_steps
        self.is_flow = isinstance(net, VelocityNet)

    @property
    def pred_horizon(self) -> int:
        return self.net.out_shape[0]

    def generate_batch(self, obs_window, m: int, rng: np.random.Generator) -> np.ndarray:
        cond = self.normalizer.normalize_obs(obs_window).ravel()
        if self.is_flow:
            out = fm_sample_batch(self.net, cond, m, self.fm_steps, rng)
        else:
            z = sample_latents(rng, m, self.net.input_dim - cond.size)
            x = np.concatenate([z, np.broadcast_to(cond, (m, cond.size))], axis=1)
            out, _ = forward_batch(self.net, x)
            out = out.reshape(m, *self.net.out_shape)
        return self.normalizer.denormalize_actions(out)


def generate_batch(policy: Policy, obs_window, m: int, rng: np.random.Generator) -> np.ndarray:
    return policy.generate_batch(obs_window, m, rng)


def overlap_distances(candidates: np.ndarray, a_prev: np.ndarray, action_horizon: int) -> np.ndarray:
    """Distance between the unexecuted tail of ``a_prev`` and each candidate's head."""
    T_p = a_prev.shape[0]
    if T_p != 2 * action_horizon:
        raise ValueError(
            f"consistency overlap needs T_p == 2 * T_a (got T_p={T_p}, T_a={action_horizon})"
        )
    tail = a_prev[action_horizon:]
    head = np.asarray(candidates)[:, :T_p - action_horizon]
    diff = (head - tail[None]).reshape(len(head), -1)
    return np.sqrt(np.einsum("mk,mk->m", diff, diff))


def select_consistent(candidates, a_prev, action_horizon: int) -> int:
    if a_prev is None:
        raise ValueError("no previous trajectory; use uniform selection")
    return int(np.argmin(overlap_distances(candidates, np.asarray(a_prev), action_horizon)))


@dataclass
class ActInfo:
    reset_flag: bool
    j_star: int
    overlap: float | None
    candidates: np.ndarray


def act(buffer: HorizonBuffer, policy, cfg: InferenceConfig, rng: np.random.Generator):
    """One planning call: returns (first T_a actions of the chosen plan, buffer, ActInfo).

    ``policy`` is anything with ``generate_batch(obs_window, m, rng)`` and
    ``action_horizon``.
    """
    m = cfg.num_candidates
    cands = policy.generate_batch(buffer.window(), m, rng)
    T_a = policy.action_horizon
    uniform = (not cfg.consistency_enabled) or buffer.a_prev is None or buffer.steps_since_reset == 0
    # drawn on every call so both branches consume the stream identically
    j_uniform = int(rng.integers(m))
    if uniform:
        j = j_uniform
        overlap = None
    else:
        dists = overlap_distances(cands, buffer.a_prev, T_a)
        j = int(np.argmin(dists))
        overlap = float(dists[j])
    buffer.a_prev = np.array(cands[j])
    buffer.steps_since_reset = (buffer.steps_since_reset + 1) % cfg.reset_period
    return buffer.a_prev[:T_a].copy(), buffer, ActInfo(uniform, j, overlap, cands)
