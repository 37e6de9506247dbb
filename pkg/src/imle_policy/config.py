"""Run configuration stored as INI text (``[run]``, ``[task]``, ``[train]``, ``[inference]``, ``[eval]``)."""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, field, fields, replace

from .imle_core import TrainConfig
from .policy import InferenceConfig

METHODS = ("imle", "imle_no_consistency", "fm1", "fm_k")
TASKS = ("toy", "pushlite")


class ConfigError(ValueError):
    pass


TASK_DEFAULTS = {
    # the toy action is one scalar tiled over T_p, so one latent dimension
    "toy": dict(n_demos=20, train=dict(obs_horizon=1, pred_horizon=16, action_horizon=8, latent_dim=1, epochs=4000)),
    "pushlite": dict(n_demos=100, train=dict(obs_horizon=2, pred_horizon=16, action_horizon=8, latent_dim=None, epochs=100)),
}


@dataclass
class RunConfig:
    task: str = "toy"
    method: str = "imle"
    seed: int = 0
    out: str = "runs"
    n_demos: int = 20
    fraction: float = 1.0
    # task
    weights: tuple[float, float] = (0.5, 0.5)
    noise_std: float = 0.01
    jitter: float = 0.002
    # train / inference
    train: TrainConfig = field(default_factory=TrainConfig)
    inference: InferenceConfig = field(default_factory=InferenceConfig)
    checkpoint_every: int = 50
    fm_steps: int = 1
    n_episodes: int = 50
    max_steps: int = 300
    # eval
    eval_samples: int = 200
    min_fraction: float = 0.15

    def __post_init__(self):
        self.weights = tuple(float(w) for w in self.weights)
        self.validate()

    @classmethod
    def for_task(cls, task: str, **overrides) -> RunConfig:
        if task not in TASK_DEFAULTS:
            raise ConfigError(f"unknown task {task!r}; choose from {TASKS}")
        d = TASK_DEFAULTS[task]
        train = TrainConfig(**{**d["train"], **overrides.pop("train", {})})
        overrides.setdefault("n_demos", d["n_demos"])
        return cls(task=task, train=train, **overrides)

    def validate(self):
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}; choose from {TASKS}")
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {METHODS}")
        if not 0.0 < self.fraction <= 1.0:
            raise ConfigError(f"fraction must be in (0, 1], got {self.fraction}")
        if self.n_demos < 2:
            raise ConfigError("n_demos must be >= 2")
        if self.method == "fm_k" and self.fm_steps < 1:
            raise ConfigError("fm_k needs fm_steps >= 1")
        if self.method == "imle" and self.inference.consistency_enabled:
            t = self.train
            if t.pred_horizon != 2 * t.action_horizon:
                raise ConfigError(
                    f"temporal consistency needs pred_horizon == 2 * action_horizon "
                    f"(got {t.pred_horizon}, {t.action_horizon})"
                )
        # fresh copies: dataclasses.replace shares nested configs
        self.train = replace(self.train, seed=self.seed)
        self.inference = replace(self.inference, seed=self.seed)

    @property
    def is_flow(self) -> bool:
        return self.method.startswith("fm")

    @property
    def sample_steps(self) -> int:
        return 1 if self.method == "fm1" else self.fm_steps

    def inference_for_method(self) -> InferenceConfig:
        inf = self.inference
        if self.method == "imle_no_consistency":
            return replace(inf, consistency_enabled=False)
        if self.is_flow:
            # uniform choice among i.i.d. samples is the same as drawing one
            return replace(inf, num_candidates=1, consistency_enabled=False)
        return inf

    def with_(self, **kw) -> RunConfig:
        return replace(self, **kw)

    # -- INI ---------------------------------------------------------------

    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp["run"] = {
            "task": self.task, "method": self.method, "seed": str(self.seed), "out": self.out,
            "n_demos": str(self.n_demos), "fraction": repr(self.fraction),
        }
        cp["task"] = {
            "weights": ",".join(repr(w) for w in self.weights),
            "noise_std": repr(self.noise_std), "jitter": repr(self.jitter),
        }
        t = self.train
        cp["train"] = {
            "num_latents": str(t.num_latents), "epsilon": repr(t.epsilon),
            "latent_dim": "auto" if t.latent_dim is None else str(t.latent_dim),
            "epochs": str(t.epochs), "batch_size": str(t.batch_size),
            "obs_horizon": str(t.obs_horizon), "pred_horizon": str(t.pred_horizon),
            "action_horizon": str(t.action_horizon), "hidden": ",".join(map(str, t.hidden)),
            "lr": repr(t.lr), "beta1": repr(t.beta1), "beta2": repr(t.beta2), "eps_stab": repr(t.eps_stab),
            "checkpoint_every": str(self.checkpoint_every),
        }
        i = self.inference
        cp["inference"] = {
            "num_candidates": str(i.num_candidates), "reset_period": str(i.reset_period),
            "consistency_enabled": str(i.consistency_enabled).lower(), "fm_steps": str(self.fm_steps),
            "n_episodes": str(self.n_episodes), "max_steps": str(self.max_steps),
        }
        cp["eval"] = {"samples": str(self.eval_samples), "min_fraction": repr(self.min_fraction)}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text: str) -> RunConfig:
        cp = configparser.ConfigParser(interpolation=None)
        try:
            cp.read_string(text)
            task = cp.get("run", "task", fallback="toy")
            base = cls.for_task(task)
            run = cp["run"] if cp.has_section("run") else {}
            tk = cp["task"] if cp.has_section("task") else {}
            tr = cp["train"] if cp.has_section("train") else {}
            inf = cp["inference"] if cp.has_section("inference") else {}
            ev = cp["eval"] if cp.has_section("eval") else {}
            _reject_unknown(cp)
            t0 = base.train
            latent = tr.get("latent_dim", "auto" if t0.latent_dim is None else str(t0.latent_dim))
            train = TrainConfig(
                num_latents=int(tr.get("num_latents", t0.num_latents)),
                epsilon=float(tr.get("epsilon", t0.epsilon)),
                latent_dim=None if latent in ("auto", "", "none") else int(latent),
                epochs=int(tr.get("epochs", t0.epochs)),
                batch_size=int(tr.get("batch_size", t0.batch_size)),
                obs_horizon=int(tr.get("obs_horizon", t0.obs_horizon)),
                pred_horizon=int(tr.get("pred_horizon", t0.pred_horizon)),
                action_horizon=int(tr.get("action_horizon", t0.action_horizon)),
                hidden=tuple(int(h) for h in str(tr.get("hidden", ",".join(map(str, t0.hidden)))).split(",")),
                lr=float(tr.get("lr", t0.lr)), beta1=float(tr.get("beta1", t0.beta1)),
                beta2=float(tr.get("beta2", t0.beta2)), eps_stab=float(tr.get("eps_stab", t0.eps_stab)),
            )
            i0 = base.inference
            inference = InferenceConfig(
                num_candidates=int(inf.get("num_candidates", i0.num_candidates)),
                reset_period=int(inf.get("reset_period", i0.reset_period)),
                consistency_enabled=_bool(inf.get("consistency_enabled", str(i0.consistency_enabled))),
            )
            return cls(
                task=task,
                method=run.get("method", base.method),
                seed=int(run.get("seed", base.seed)),
                out=run.get("out", base.out),
                n_demos=int(run.get("n_demos", base.n_demos)),
                fraction=float(run.get("fraction", base.fraction)),
                weights=tuple(float(w) for w in str(tk.get("weights", "0.5,0.5")).split(",")),
                noise_std=float(tk.get("noise_std", base.noise_std)),
                jitter=float(tk.get("jitter", base.jitter)),
                train=train,
                inference=inference,
                checkpoint_every=int(tr.get("checkpoint_every", base.checkpoint_every)),
                fm_steps=int(inf.get("fm_steps", base.fm_steps)),
                n_episodes=int(inf.get("n_episodes", base.n_episodes)),
                max_steps=int(inf.get("max_steps", base.max_steps)),
                eval_samples=int(ev.get("samples", base.eval_samples)),
                min_fraction=float(ev.get("min_fraction", base.min_fraction)),
            )
        except ConfigError:
            raise
        except (configparser.Error, ValueError, TypeError) as e:
            raise ConfigError(f"malformed config: {e}") from e

    def digest(self) -> str:
        """Short hash of everything except the output directory."""
        return hashlib.sha256(replace(self, out="").to_ini().encode()).hexdigest()[:8]


_KNOWN = {
    "run": {"task", "method", "seed", "out", "n_demos", "fraction"},
    "task": {"weights", "noise_std", "jitter"},
    "train": {f.name for f in fields(TrainConfig)} - {"seed"} | {"checkpoint_every"},
    "inference": {"num_candidates", "reset_period", "consistency_enabled", "fm_steps", "n_episodes", "max_steps"},
    "eval": {"samples", "min_fraction"},
}


def _reject_unknown(cp: configparser.ConfigParser):
    for section in cp.sections():
        if section not in _KNOWN:
            raise ConfigError(f"unknown section [{section}]")
        extra = set(cp[section]) - _KNOWN[section]
        if extra:
            raise ConfigError(f"unknown keys in [{section}]: {sorted(extra)}")


def _bool(s: str) -> bool:
    s = str(s).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {s!r}")
