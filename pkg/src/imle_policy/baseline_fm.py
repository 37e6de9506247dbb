"""Conditional rectified-flow baseline sampled with k Euler steps.

The velocity network sees ``[x_t | observation | t]`` and is trained to
regress ``A - x0`` along the straight path ``x_t = (1 - t) x0 + t A``.
"""

from __future__ import annotations

import numpy as np

from .imle_core import Demo, TrainConfig, make_rng, minibatch_loop, stack_dataset
from .tensor_nn import (
    DimensionError,
    GeneratorNet,
    backward_batch,
    forward_batch,
    init_net,
)


class VelocityNet(GeneratorNet):
    kind = "velocity"

    @property
    def action_size(self) -> int:
        return self.layer_sizes[-1]

    @property
    def obs_dim(self) -> int:
        return self.input_dim - self.action_size - 1


def new_velocity_net(obs_dim: int, pred_horizon: int, action_dim: int, cfg: TrainConfig) -> VelocityNet:
    out = pred_horizon * action_dim
    sizes = [out + obs_dim + 1, *cfg.hidden, out]
    return init_net(sizes, (pred_horizon, action_dim), make_rng(cfg.seed, "init"), cls=VelocityNet)


def velocity_batch(net: VelocityNet, x: np.ndarray, t: np.ndarray, obs: np.ndarray, keep_cache=False):
    inp = np.concatenate([x, obs, np.reshape(t, (-1, 1))], axis=1)
    return forward_batch(net, inp, keep_cache=keep_cache)


def batch_fm_loss_and_grad(net: VelocityNet, obs, actions, x0, t):
    """Mean-squared velocity error over a batch; ``x0`` [B, D] and ``t`` [B]."""
    B = obs.shape[0]
    a = actions.reshape(B, -1)
    if a.shape[1] != net.action_size:
        raise DimensionError(f"demo actions {actions.shape[1:]} do not match net output {net.out_shape}")
    xt = (1.0 - t)[:, None] * x0 + t[:, None] * a
    v, cache = velocity_batch(net, xt, t, obs, keep_cache=True)
    r = v - (a - x0)
    loss = float(np.mean(r * r))
    grads = backward_batch(net, cache, 2.0 * r / r.size)
    return loss, grads


def fm_loss_and_grad(net: VelocityNet, demo: Demo, rng: np.random.Generator):
    actions = np.asarray(demo.actions, dtype=np.float64)
    x0 = rng.standard_normal((1, actions.size))
    t = rng.uniform(0.0, 1.0, size=1)
    obs = np.asarray(demo.observation, dtype=np.float64).reshape(1, -1)
    return batch_fm_loss_and_grad(net, obs, actions[None], x0, t)


def fm_sample_batch(net: VelocityNet, obs, n: int, steps: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` trajectories for one observation, shape [n, T_p, action_dim]."""
    if steps < 1:
        raise ValueError("need at least one Euler step")
    cond = np.broadcast_to(np.asarray(obs, dtype=np.float64).ravel(), (n, net.obs_dim))
    x = rng.standard_normal((n, net.action_size))
    dt = 1.0 / steps
    t = np.empty(n)
    for i in range(steps):
        t.fill(i * dt)
        v, _ = velocity_batch(net, x, t, cond)
        x = x + dt * v
    return x.reshape(n, *net.out_shape)


def fm_sample(net: VelocityNet, obs, steps: int, rng: np.random.Generator) -> np.ndarray:
    return fm_sample_batch(net, obs, 1, steps, rng)[0]


def train_fm(dataset: list[Demo], cfg: TrainConfig, net: VelocityNet | None = None, on_epoch_end=None):
    obs, acts = stack_dataset(dataset)
    if net is None:
        net = new_velocity_net(obs.shape[1], acts.shape[1], acts.shape[2], cfg)

    def run(net, obs_b, acts_b, rng):
        B = obs_b.shape[0]
        x0 = rng.standard_normal((B, net.action_size))
        t = rng.uniform(0.0, 1.0, size=B)
        loss, grads = batch_fm_loss_and_grad(net, obs_b, acts_b, x0, t)
        return loss, grads, {}

    report = minibatch_loop(net, obs, acts, cfg, run, on_epoch_end)
    return net, report
