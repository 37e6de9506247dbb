import functools

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from imle_policy import experiments as ex
from imle_policy.config import RunConfig
from imle_policy.tensor_nn import forward_batch, init_net

settings.register_profile(
    "repo", derandomize=True, deadline=None, max_examples=50,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("repo")

# filled by tests/test_acceptance.py, printed after the run
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, line = ACCEPTANCE[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {n:>2}: {line}")


def rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


def fd_probe_errors(net, x, out_grad, grads, rng, probes=100, h=1e-5):
    """Relative errors between <grads, u> and central differences along random u."""
    params = net.params()
    errs = []
    for _ in range(probes):
        u = [rng.standard_normal(p.shape) for p in params]
        analytic = sum(float(np.sum(g * d)) for g, d in zip(grads, u))
        vals = []
        for sign in (1.0, -1.0):
            shifted = net.copy()
            for p, d in zip(shifted.params(), u):
                p += sign * h * d
            out, _ = forward_batch(shifted, x)
            vals.append(float(np.sum(out * out_grad)))
        errs.append(rel_err(analytic, (vals[0] - vals[1]) / (2 * h)))
    return errs


@pytest.fixture
def small_net():
    rng = np.random.default_rng(7)
    net = init_net([3, 6, 5, 4], (2, 2), rng)
    for b in net.biases:
        b[:] = rng.normal(scale=0.3, size=b.shape)
    return net


@functools.cache
def trained_toy(method: str, seed: int, weights=(0.5, 0.5)):
    """Toy-branch policy trained with the task defaults (20 demos, 4000 epochs)."""
    cfg = RunConfig.for_task("toy", method=method, seed=seed, weights=weights)
    ds = ex.build_dataset(cfg)
    policy, report = ex.train_method(cfg, ds)
    return cfg, policy, report
