"""Mode coverage, set distances, rollout success and generation latency."""

from __future__ import annotations

import gc
import math
import time
from collections import Counter
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .envs import pushlite, toy
from .imle_core import make_rng
from .policy import HorizonBuffer, InferenceConfig, Policy, act


@dataclass
class ModeReport:
    counts: dict[str, int]
    modes: tuple[str, ...]
    covered: tuple[str, ...]
    recall: float
    collapse: bool
    total: int
    nn_distance: float | None = None

    def fraction(self, mode: str) -> float:
        return self.counts.get(mode, 0) / self.total


def mode_coverage(samples, mode_classifier: Callable, min_fraction: float = 0.15,
                  modes=None, reference=None) -> ModeReport:
    """Count samples per mode; a ground-truth mode is covered at ``min_fraction``.

    ``modes`` lists the ground-truth modes; when omitted it falls back to
    ``mode_classifier.modes`` and then to the labels actually seen. Labels
    outside ``modes`` (e.g. "off") are counted but never cover anything.
    If ``reference`` is given the symmetrized NN distance to it is recorded.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("no samples")
    labels = [mode_classifier(s) for s in samples]
    counts = Counter(labels)
    if modes is None:
        modes = getattr(mode_classifier, "modes", None) or sorted(counts)
    modes = tuple(modes)
    n = len(samples)
    covered = tuple(m for m in modes if counts.get(m, 0) / n >= min_fraction)
    nn = None
    if reference is not None:
        nn = nn_distance(np.asarray(samples, dtype=np.float64), reference, symmetric=True)
    return ModeReport(dict(sorted(counts.items())), modes, covered, len(covered) / len(modes),
                      len(covered) < len(modes), n, nn)


def _rows(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x.reshape(len(x), -1) if x.ndim > 1 else x.reshape(-1, 1)


def nn_distance(set_a, set_b, symmetric: bool = False) -> float:
    """Mean over ``a`` of the distance to its nearest element of ``b``.

    Rows of a 2-D (or higher) array are elements; a 1-D array is a set of scalars.
    """
    a, b = _rows(set_a), _rows(set_b)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("nn_distance needs two non-empty sets")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"element sizes differ: {a.shape[1]} vs {b.shape[1]}")
    # fixed accumulation order and a correctly rounded mean keep the value
    # independent of element order
    d2 = np.zeros((len(a), len(b)))
    for k in range(a.shape[1]):
        diff = a[:, None, k] - b[None, :, k]
        d2 += diff * diff
    d = np.sqrt(d2)
    forward = math.fsum(d.min(axis=1)) / len(a)
    if not symmetric:
        return forward
    return 0.5 * (forward + math.fsum(d.min(axis=0)) / len(b))


# -- rollouts ----------------------------------------------------------------

class PolicyController:
    """Drives pushlite with a :class:`Policy` through :func:`act`."""

    def __init__(self, policy: Policy, cfg: InferenceConfig):
        self.policy = policy
        self.cfg = cfg

    def begin(self, state, rng):
        self.rng = rng
        self.buffer = HorizonBuffer.start(pushlite.observe(state), self.policy.obs_horizon)

    def plan(self, state):
        actions, self.buffer, info = act(self.buffer, self.policy, self.cfg, self.rng)
        return actions, info

    def observe(self, state):
        self.buffer.push(pushlite.observe(state))


class DemonstratorController:
    def __init__(self, mode: str | None = None, jitter: float = 0.0):
        self.mode = mode
        self.jitter = jitter

    def begin(self, state, rng):
        mode = self.mode or pushlite.MODES[int(rng.integers(2))]
        self.demo = pushlite.Demonstrator(mode, rng, self.jitter)

    def plan(self, state):
        return self.demo.action(state)[None], None

    def observe(self, state):
        pass


class RandomController:
    def begin(self, state, rng):
        self.rng = rng

    def plan(self, state):
        return self.rng.uniform(-pushlite.DEFAULT.max_step, pushlite.DEFAULT.max_step, size=(1, 2)), None

    def observe(self, state):
        pass


ROLLOUT_HEADER = ("episode", "t", "reset_flag", "j_star", "overlap_distance", "action_x", "action_y")


@dataclass
class RolloutLog:
    episode: int
    success: bool
    steps: int
    rows: list = field(default_factory=list)


def run_episode(controller, state, rng, max_steps: int, episode: int = 0) -> RolloutLog:
    controller.begin(state, rng)
    log = RolloutLog(episode, pushlite.success(state), 0)
    while not log.success and state.t < max_steps:
        actions, info = controller.plan(state)
        if info is not None:
            log.rows.append((episode, state.t, int(info.reset_flag), info.j_star,
                             "" if info.overlap is None else repr(info.overlap),
                             repr(float(actions[0][0])), repr(float(actions[0][1]))))
        for a in actions:
            state = pushlite.pushlite_step(state, a)
            controller.observe(state)
            if pushlite.success(state):
                log.success = True
                break
            if state.t >= max_steps:
                break
    log.steps = state.t
    return log


def rollout_success_rate(controller, env: str = "pushlite", n_episodes: int = 50, max_steps: int = 300,
                         seed: int = 0, noise_std: float = 0.01):
    """Seeded evaluation episodes; returns ``(rate, logs)``.

    For ``env="pushlite"`` the controller follows the begin/plan/observe
    protocol. For ``env="toy"`` it must be a :class:`Policy`; each episode
    draws a condition x and scores one generated sample.
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    logs = []
    if env == "toy":
        for i in range(n_episodes):
            rng = make_rng(seed, "rollout-init", i)
            x = rng.uniform(-1.0, 1.0)
            window = np.full((controller.obs_horizon, 1), x)
            y = float(controller.generate_batch(window, 1, make_rng(seed, "rollout-policy", i)).mean())
            ok = toy.success(x, y, noise_std)
            logs.append(RolloutLog(i, ok, 1, [(i, 0, 1, 0, "", repr(x), repr(y))]))
    elif env == "pushlite":
        for i in range(n_episodes):
            state = pushlite.reset(make_rng(seed, "rollout-init", i))
            logs.append(run_episode(controller, state, make_rng(seed, "rollout-policy", i), max_steps, i))
    else:
        raise ValueError(f"unknown env {env!r}")
    return sum(l.success for l in logs) / n_episodes, logs


# -- latency -----------------------------------------------------------------

@dataclass
class LatencyReport:
    mean_ms: float
    std_ms: float
    runs: int
    k_inner_steps: int
    samples_ms: list[float]

    @property
    def hz(self) -> float:
        return 1e3 / self.mean_ms


def bench_latency(generator_callable: Callable[[], object], k_inner_steps: int = 1, runs: int = 30,
                  warmup: int = 3) -> LatencyReport:
    """Wall time of ``runs`` calls after ``warmup`` untimed ones, on one BLAS thread.

    The garbage collector is paused while timing, as ``timeit`` does.
    """
    times = []
    gc_was_enabled = gc.isenabled()
    with threadpool_limits(limits=1):
        for _ in range(warmup):
            generator_callable()
        gc.disable()
        try:
            for _ in range(runs):
                t0 = time.perf_counter_ns()
                generator_callable()
                times.append((time.perf_counter_ns() - t0) / 1e6)
        finally:
            if gc_was_enabled:
                gc.enable()
    arr = np.array(times)
    return LatencyReport(float(arr.mean()), float(arr.std()), runs, k_inner_steps, times)
