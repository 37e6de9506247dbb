"""Kinematic planar pushing: a disk effector pushes a square block to a target.

The block starts below the target with the effector hovering above it, so
the effector has to go around the block on the left or the right before it
can push upward. Both detours are equally valid demonstrations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

OBS_DIM = 8
ACTION_DIM = 2
MODES = ("left", "right")
CENTER = "center"


@dataclass(frozen=True)
class PushLiteParams:
    effector_radius: float = 0.02
    block_half: float = 0.05
    max_step: float = 0.02
    rotation_gain: float = 0.05
    target: tuple[float, float, float] = (0.5, 0.75, 0.0)
    success_dist: float = 0.05
    success_angle: float = 0.2
    max_steps: int = 300


DEFAULT = PushLiteParams()


@dataclass
class PushLiteState:
    effector: np.ndarray
    block: np.ndarray
    angle: float
    target: np.ndarray = field(default_factory=lambda: np.array(DEFAULT.target))
    t: int = 0

    def copy(self) -> PushLiteState:
        return PushLiteState(self.effector.copy(), self.block.copy(), float(self.angle), self.target.copy(), self.t)


def observe(state: PushLiteState) -> np.ndarray:
    return np.array([
        state.effector[0], state.effector[1], state.block[0], state.block[1],
        np.sin(state.angle), np.cos(state.angle), state.target[0], state.target[1],
    ])


def _rot(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s], [s, c]])


def contact_displacement(effector, block, angle, params: PushLiteParams = DEFAULT):
    """Block translation that resolves overlap with the effector disk.

    Returns (displacement, contact point) or (None, None) when not touching.
    """
    h, r = params.block_half, params.effector_radius
    R = _rot(angle)
    p = R.T @ (effector - block)
    inside = abs(p[0]) <= h and abs(p[1]) <= h
    if inside:
        # push out through the nearest face
        gaps = np.array([h - p[0], h + p[0], h - p[1], h + p[1]])
        k = int(np.argmin(gaps))
        normal = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]][k])
        q = p.copy()
        q[k // 2] = normal[k // 2] * h
        d_local = -normal * (gaps[k] + r)
    else:
        q = np.clip(p, -h, h)
        gap = float(np.linalg.norm(p - q))
        if gap >= r:
            return None, None
        d_local = (q - p) / gap * (r - gap)
    return R @ d_local, block + R @ q


def pushlite_step(state: PushLiteState, action, params: PushLiteParams = DEFAULT) -> PushLiteState:
    """Advance one step. Oversized actions are scaled down to ``max_step``."""
    a = np.nan_to_num(np.asarray(action, dtype=np.float64).reshape(2))
    norm = float(np.hypot(a[0], a[1]))
    if norm > params.max_step:
        a = a * (params.max_step / norm)
    nxt = state.copy()
    nxt.t += 1
    if norm == 0.0:
        return nxt
    nxt.effector = np.clip(state.effector + a, 0.0, 1.0)
    disp, contact = contact_displacement(nxt.effector, nxt.block, nxt.angle, params)
    if disp is not None:
        arm = contact - nxt.block
        torque = arm[0] * disp[1] - arm[1] * disp[0]
        nxt.angle = float(nxt.angle + params.rotation_gain * torque / params.block_half**2)
        nxt.block = np.clip(nxt.block + disp, 0.0, 1.0)
    return nxt


def angle_error(a: float, b: float) -> float:
    # square block: orientation is only defined modulo pi/2
    d = (a - b + np.pi / 4) % (np.pi / 2) - np.pi / 4
    return abs(float(d))


def success(state: PushLiteState, params: PushLiteParams = DEFAULT) -> bool:
    dist = float(np.hypot(*(state.block - state.target[:2])))
    return dist < params.success_dist and angle_error(state.angle, state.target[2]) < params.success_angle


def reset(rng: np.random.Generator, params: PushLiteParams = DEFAULT, effector_offset: float | None = None):
    """Random initial state: block low and near the centre line, effector above it."""
    h, r = params.block_half, params.effector_radius
    bx = 0.5 + rng.uniform(-0.03, 0.03)
    by = rng.uniform(0.25, 0.40)
    u = rng.uniform(-0.03, 0.03) if effector_offset is None else effector_offset
    effector = np.array([bx + u, by + h + r + 0.03])
    return PushLiteState(effector, np.array([bx, by]), 0.0, np.array(params.target))


# -- scripted demonstrator ---------------------------------------------------

class UnreachableError(ValueError):
    pass


class Demonstrator:
    """Waypoint controller that detours around the block on one side, then pushes up."""

    margin = 0.02
    speed = 0.015
    tol = 5e-3

    def __init__(self, mode: str, rng: np.random.Generator | None = None, jitter: float = 0.002,
                 params: PushLiteParams = DEFAULT):
        if mode not in MODES:
            raise ValueError(f"unknown pushlite mode {mode!r}")
        self.mode = mode
        self.side = -1.0 if mode == "left" else 1.0
        self.rng = rng
        self.jitter = jitter
        self.params = params
        self.phase = 0

    def check(self, state: PushLiteState):
        h, r = self.params.block_half, self.params.effector_radius
        lane = state.block[0] + self.side * (h + r + self.margin)
        floor = state.block[1] - h - r - self.margin
        if not (r <= lane <= 1 - r) or floor < r:
            raise UnreachableError(f"no room to go {self.mode} of the block at {state.block}")

    def action(self, state: PushLiteState) -> np.ndarray:
        h, r = self.params.block_half, self.params.effector_radius
        e, b = state.effector, state.block
        lane = b[0] + self.side * (h + r + self.margin)
        floor = b[1] - h - r - self.margin
        waypoints = [(lane, e[1]), (lane, floor), (b[0], floor)]
        while self.phase < 3 and np.hypot(*(np.array(waypoints[self.phase]) - e)) < self.tol:
            self.phase += 1
        if self.phase < 3:
            delta = np.array(waypoints[self.phase]) - e
            dist = float(np.hypot(*delta))
            step = delta / dist * min(self.speed, dist)
        else:
            step = np.array([np.clip(b[0] - e[0], -self.speed, self.speed), self.speed])
        if self.jitter and self.rng is not None:
            step = step + self.jitter * self.rng.standard_normal(2)
        norm = float(np.hypot(*step))
        if norm > self.params.max_step:
            step *= self.params.max_step / norm
        return step


@dataclass
class Episode:
    observations: np.ndarray  # [L, obs_dim]
    actions: np.ndarray  # [L, action_dim]
    mode: str
    success: bool
    states: list = field(default_factory=list)

    def __len__(self):
        return len(self.actions)


def run_demonstrator(state: PushLiteState, mode: str, rng=None, jitter: float = 0.002,
                     params: PushLiteParams = DEFAULT) -> Episode:
    demo = Demonstrator(mode, rng, jitter, params)
    demo.check(state)
    obs, acts, states = [], [], [state]
    ok = False
    while state.t < params.max_steps:
        a = demo.action(state)
        obs.append(observe(state))
        acts.append(a)
        state = pushlite_step(state, a, params)
        states.append(state)
        if success(state, params):
            ok = True
            break
    return Episode(np.array(obs), np.array(acts), mode, ok, states)


def pre_contact_offset(episode: Episode, params: PushLiteParams = DEFAULT) -> float:
    """Mean lateral effector offset from the block centre before first contact."""
    offsets = []
    for s in episode.states:
        if contact_displacement(s.effector, s.block, s.angle, params)[0] is not None:
            break
        offsets.append(s.effector[0] - s.block[0])
    return float(np.mean(offsets)) if offsets else 0.0


def classify_plan(state_obs: np.ndarray, actions: np.ndarray, params: PushLiteParams = DEFAULT) -> str:
    """Which side of the block a planned action chunk detours to.

    ``state_obs`` is the current observation; the plan is integrated from
    the effector position and its mean lateral offset is thresholded.
    """
    path = state_obs[:2] + np.cumsum(np.asarray(actions).reshape(-1, 2), axis=0)
    offset = float(np.mean(path[:, 0]) - state_obs[2])
    band = 0.25 * params.block_half
    if offset < -band:
        return "left"
    if offset > band:
        return "right"
    return CENTER
