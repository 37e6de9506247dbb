"""1-D branching function with a single trunk for x <= 0 and two branches for x > 0."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..imle_core import Demo, make_rng

MODES = ("upper", "lower")
TRUNK = "trunk"
OFF = "off"


@dataclass
class ToyBranchSpec:
    n_demos: int = 20
    weights: tuple[float, float] = (0.5, 0.5)  # (upper, lower) for x > 0
    noise_std: float = 0.01
    seed: int = 0
    obs_horizon: int = 1
    pred_horizon: int = 16

    def __post_init__(self):
        self.weights = tuple(float(w) for w in self.weights)
        if len(self.weights) != 2 or min(self.weights) < 0 or abs(sum(self.weights) - 1.0) > 1e-9:
            raise ValueError(f"branch weights must be two non-negative numbers summing to 1, got {self.weights}")
        if self.n_demos < 2:
            raise ValueError("need at least 2 demos")


def trunk(x):
    return 0.5 * np.sin(np.pi * np.asarray(x))


def upper(x):
    return 0.8 * np.asarray(x)


def lower(x):
    return -0.8 * np.asarray(x)


def branch_values(x: float) -> dict[str, float]:
    """Analytic mode values at condition x."""
    if x <= 0:
        return {TRUNK: float(trunk(x))}
    return {"upper": float(upper(x)), "lower": float(lower(x))}


def classify(x: float, y: float, tol: float = 0.15) -> str:
    """Nearest analytic branch, or ``"off"`` if none is within ``tol``."""
    vals = branch_values(x)
    name = min(vals, key=lambda k: abs(y - vals[k]))
    return name if abs(y - vals[name]) < tol else OFF


def to_demo(x: float, y: float, obs_horizon: int, pred_horizon: int) -> Demo:
    return Demo(np.full(obs_horizon, float(x)), np.full((pred_horizon, 1), float(y)))


def sample_point(x: float, branch: str, noise_std: float, rng: np.random.Generator) -> float:
    base = branch_values(x).get(branch)
    if base is None:
        raise ValueError(f"branch {branch!r} does not exist at x={x}")
    return base + noise_std * rng.standard_normal()


def gen_toy_branch_dataset(spec: ToyBranchSpec) -> tuple[list[Demo], list[str]]:
    rng = make_rng(spec.seed, "toy-data")
    xs = rng.uniform(-1.0, 1.0, size=spec.n_demos)
    picks = rng.uniform(size=spec.n_demos)
    noise = rng.standard_normal(spec.n_demos)
    demos, labels = [], []
    for x, u, eps in zip(xs, picks, noise):
        if x <= 0:
            label = TRUNK
        else:
            label = "upper" if u < spec.weights[0] else "lower"
        y = branch_values(x)[label] + spec.noise_std * eps
        demos.append(to_demo(x, y, spec.obs_horizon, spec.pred_horizon))
        labels.append(label)
    return demos, labels


def success(x: float, y: float, noise_std: float = 0.01) -> bool:
    vals = branch_values(x)
    return min(abs(y - v) for v in vals.values()) < 3.0 * noise_std
