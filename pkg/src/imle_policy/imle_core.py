"""Conditional rejection-sampling IMLE: candidate selection and training."""

from __future__ import annotations

import logging
import time
import zlib
from dataclasses import dataclass, field

import numpy as np

from .tensor_nn import (
    AdamState,
    DimensionError,
    GeneratorNet,
    adam_step,
    backward_batch,
    forward_batch,
    generator_layer_sizes,
    init_net,
)

log = logging.getLogger(__name__)


def make_rng(seed: int, stream: str, *index: int) -> np.random.Generator:
    """Independent PCG64 stream keyed by ``(seed, stream name, *index)``.

    Streams are derived with ``SeedSequence`` spawn keys, so e.g. the
    latent draws of a run can be replayed without touching the init or
    shuffle streams.
    """
    key = (zlib.crc32(stream.encode()), *(int(i) for i in index))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=key)))


@dataclass
class Demo:
    observation: np.ndarray  # flat, T_o stacked frames
    actions: np.ndarray  # [T_p, action_dim]


@dataclass
class TrainConfig:
    num_latents: int = 20
    epsilon: float = 0.03
    latent_dim: int | None = None  # None -> T_p * action_dim
    epochs: int = 1000
    batch_size: int = 32
    seed: int = 0
    obs_horizon: int = 2
    pred_horizon: int = 16
    action_horizon: int = 8
    hidden: tuple[int, ...] = (128, 128)
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_stab: float = 1e-8

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.num_latents < 1:
            raise ValueError("num_latents must be >= 1")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.action_horizon > self.pred_horizon:
            raise ValueError("action_horizon must not exceed pred_horizon")
        if min(self.obs_horizon, self.pred_horizon, self.action_horizon) < 1:
            raise ValueError("horizons must be >= 1")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")

    def resolved_latent_dim(self, action_dim: int) -> int:
        return self.latent_dim if self.latent_dim else self.pred_horizon * action_dim

    def adam(self, net: GeneratorNet) -> AdamState:
        return AdamState.for_net(net, lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps_stab=self.eps_stab)


@dataclass
class SelectionResult:
    valid_indices: set[int]
    chosen_index: int
    distances: list[float]
    fallback_used: bool


def euclidean_distance(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.linalg.norm((a - b).ravel()))


def sample_latents(rng: np.random.Generator, m: int, latent_dim: int) -> np.ndarray:
    """``m`` standard-normal latent vectors as the rows of an [m, latent_dim] array."""
    if m < 1:
        raise ValueError(f"need at least one latent, got m={m}")
    return rng.standard_normal((m, latent_dim))


def select_candidate(distances, epsilon: float) -> SelectionResult:
    d = np.asarray(distances, dtype=np.float64)
    if d.ndim != 1 or d.size < 1:
        raise ValueError("distances must be a non-empty 1-D list")
    if not np.all(np.isfinite(d)):
        raise ValueError("non-finite distance")
    if np.any(d < 0):
        raise ValueError("negative distance")
    valid = np.flatnonzero(d >= epsilon)
    if valid.size:
        chosen = int(valid[np.argmin(d[valid])])
        fallback = False
    else:
        chosen = int(np.argmin(d))
        fallback = True
    return SelectionResult(set(valid.tolist()), chosen, d.tolist(), fallback)


def select_rows(dist: np.ndarray, epsilon: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Row-wise :func:`select_candidate` on a [B, m] distance matrix.

    Returns (chosen index per row, fallback flag per row, rejected count per row).
    """
    valid = dist >= epsilon
    masked = np.where(valid, dist, np.inf)
    any_valid = valid.any(axis=1)
    chosen = np.where(any_valid, np.argmin(masked, axis=1), np.argmin(dist, axis=1))
    return chosen, ~any_valid, (~valid).sum(axis=1)


@dataclass
class BatchStats:
    losses: np.ndarray
    chosen: np.ndarray
    fallback: np.ndarray
    rejected: np.ndarray
    distances: np.ndarray


def batch_loss_and_grad(net: GeneratorNet, obs: np.ndarray, actions: np.ndarray,
                        latents: np.ndarray, epsilon: float):
    """Mean selected-candidate distance over a batch, and its gradient.

    obs: [B, obs_dim]; actions: [B, T_p, action_dim]; latents: [B, m, latent_dim].
    Each demo's m candidates are all conditioned on that demo's observation.
    """
    B, m, L = latents.shape
    targets = actions.reshape(B, -1)
    cond = np.repeat(obs, m, axis=0)
    x = np.concatenate([latents.reshape(B * m, L), cond], axis=1)
    cand, _ = forward_batch(net, x)
    diff = cand.reshape(B, m, -1) - targets[:, None, :]
    dist = np.sqrt(np.einsum("bmk,bmk->bm", diff, diff))
    chosen, fallback, rejected = select_rows(dist, epsilon)

    # Selection is treated as a constant: only the chosen candidates are
    # re-run and differentiated.
    x_sel = x.reshape(B, m, -1)[np.arange(B), chosen]
    out, cache = forward_batch(net, x_sel, keep_cache=True)
    r = out - targets
    d_sel = np.sqrt(np.einsum("bk,bk->b", r, r))
    safe = np.where(d_sel > 0, d_sel, 1.0)
    grad_out = np.where(d_sel[:, None] > 0, r / safe[:, None], 0.0) / B
    grads = backward_batch(net, cache, grad_out)
    losses = dist[np.arange(B), chosen]
    return float(losses.mean()), grads, BatchStats(losses, chosen, fallback, rejected, dist)


def imle_loss_and_grad(net: GeneratorNet, demo: Demo, cfg: TrainConfig, rng: np.random.Generator):
    """Loss, gradients and selection for one demo with fresh latents."""
    actions = np.asarray(demo.actions, dtype=np.float64)
    if actions.size != net.layer_sizes[-1]:
        raise DimensionError(f"demo actions {actions.shape} do not match net output {net.out_shape}")
    latent_dim = net.input_dim - np.size(demo.observation)
    z = sample_latents(rng, cfg.num_latents, latent_dim)
    loss, grads, st = batch_loss_and_grad(
        net, np.asarray(demo.observation, dtype=np.float64).reshape(1, -1),
        actions.reshape(1, *actions.shape), z[None], cfg.epsilon,
    )
    d = st.distances[0]
    valid = set(np.flatnonzero(d >= cfg.epsilon).tolist())
    return loss, grads, SelectionResult(valid, int(st.chosen[0]), d.tolist(), bool(st.fallback[0]))


# -- training loop -------------------------------------------------------------

class TrainingDiverged(RuntimeError):
    pass


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    mean_rejection_fraction: float
    fallback_count: int
    wall_ms: float


@dataclass
class TrainingReport:
    epochs: list[EpochStats] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.epochs[-1].mean_loss if self.epochs else float("nan")

    CSV_HEADER = ("epoch", "mean_loss", "mean_rejection_fraction", "fallback_count", "wall_ms")

    def rows(self):
        for e in self.epochs:
            yield (e.epoch, repr(e.mean_loss), repr(e.mean_rejection_fraction), e.fallback_count,
                   f"{e.wall_ms:.3f}")


def stack_dataset(dataset: list[Demo]) -> tuple[np.ndarray, np.ndarray]:
    if not dataset:
        raise ValueError("dataset is empty")
    obs = np.stack([np.asarray(d.observation, dtype=np.float64).ravel() for d in dataset])
    acts = np.stack([np.asarray(d.actions, dtype=np.float64) for d in dataset])
    if acts.ndim != 3:
        raise DimensionError(f"demo actions must be [T_p, action_dim], got {acts.shape[1:]}")
    return obs, acts


def minibatch_loop(net, obs, acts, cfg: TrainConfig, batch_fn, on_epoch_end=None) -> TrainingReport:
    """Shared epoch/minibatch driver.

    ``batch_fn(net, obs_b, acts_b, rng)`` returns ``(loss, grads, info)``
    where info is a dict with optional ``rejected`` and ``fallback`` counts.
    """
    n = obs.shape[0]
    shuffle_rng = make_rng(cfg.seed, "shuffle")
    sample_rng = make_rng(cfg.seed, "latents")
    opt = cfg.adam(net)
    report = TrainingReport()
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(n)
        loss_sum = 0.0
        rejected = 0
        fallbacks = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            try:
                loss, grads, info = batch_fn(net, obs[idx], acts[idx], sample_rng)
                if not np.isfinite(loss):
                    raise FloatingPointError(f"loss became {loss}")
                adam_step(net, grads, opt)
            except FloatingPointError as e:
                raise TrainingDiverged(f"training diverged at epoch {epoch}, batch starting {start}: {e}") from e
            loss_sum += loss * len(idx)
            rejected += info.get("rejected", 0)
            fallbacks += info.get("fallback", 0)
        stats = EpochStats(
            epoch=epoch,
            mean_loss=loss_sum / n,
            mean_rejection_fraction=rejected / (n * cfg.num_latents) if "rejected" in info else 0.0,
            fallback_count=fallbacks,
            wall_ms=(time.perf_counter() - t0) * 1e3,
        )
        report.epochs.append(stats)
        if on_epoch_end is not None:
            on_epoch_end(epoch, net, stats)
    return report


def _imle_batch(cfg: TrainConfig):
    def run(net, obs_b, acts_b, rng):
        latent_dim = net.input_dim - obs_b.shape[1]
        z = rng.standard_normal((obs_b.shape[0], cfg.num_latents, latent_dim))
        loss, grads, st = batch_loss_and_grad(net, obs_b, acts_b, z, cfg.epsilon)
        return loss, grads, {"rejected": int(st.rejected.sum()), "fallback": int(st.fallback.sum())}
    return run


def new_generator(obs_dim: int, pred_horizon: int, action_dim: int, cfg: TrainConfig) -> GeneratorNet:
    latent_dim = cfg.resolved_latent_dim(action_dim)
    sizes = generator_layer_sizes(latent_dim, obs_dim, pred_horizon * action_dim, cfg.hidden)
    return init_net(sizes, (pred_horizon, action_dim), make_rng(cfg.seed, "init"))


def train(dataset: list[Demo], cfg: TrainConfig, net: GeneratorNet | None = None, on_epoch_end=None):
    """Train a generator on normalized demos; returns ``(net, TrainingReport)``."""
    obs, acts = stack_dataset(dataset)
    if net is None:
        net = new_generator(obs.shape[1], acts.shape[1], acts.shape[2], cfg)
    elif net.out_shape != acts.shape[1:]:
        raise DimensionError(f"net output {net.out_shape} does not match demo actions {acts.shape[1:]}")
    report = minibatch_loop(net, obs, acts, cfg, _imle_batch(cfg), on_epoch_end)
    if report.epochs:
        log.info("trained %d epochs, final loss %.5f", cfg.epochs, report.final_loss)
    return net, report
