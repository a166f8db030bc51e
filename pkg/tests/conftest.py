import os

import numpy as np
import pytest

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
os.environ.setdefault("HVFAE_DATA_DIR", os.path.join(ROOT, "data"))


def numeric_grad(f, x, h=1e-6):
    """Central differences of scalar ``f`` at array ``x`` (copied)."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(1e-8, np.max(np.abs(a)), np.max(np.abs(b))))


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(1234))


def has_raw_data():
    d = os.environ["HVFAE_DATA_DIR"]
    return all(os.path.exists(os.path.join(d, n)) for n in ("adult.data", "adult.test", "german.data"))


def tiny_model(variant="hvfae", prior="vampprior", D=6, M=2, hidden=(4,), seed=0, alpha=1.0, K=3,
               n_data=8):
    from hvfae.models import FairModel, ModelConfig
    r = np.random.Generator(np.random.PCG64(seed))
    cfg = ModelConfig(x_dim=D, z1_dim=M, z2_dim=M, variant=variant, prior=prior,
                      hidden=hidden, alpha=alpha, n_pseudo=K)
    x = (r.uniform(size=(n_data, D)) < 0.5).astype(float)
    return FairModel.create(cfg, r, init_x=x)


def tiny_batch(n=4, D=6, seed=1):
    r = np.random.Generator(np.random.PCG64(seed))
    x = (r.uniform(size=(n, D)) < 0.5).astype(float)
    y = np.arange(n) % 2
    s = (np.arange(n) // 2) % 2
    return x, y, s


def param_fd_check(model, objective, names=None, h=1e-6, max_entries=6, reference=None):
    """Compare autodiff and central differences for a few entries of each
    parameter; ``objective(P) -> Tensor`` must redraw identical noise.
    ``reference`` (default ``objective``) is the function differenced."""
    reference = reference or objective
    from hvfae import nn
    _, grads = nn.grad(lambda P: objective(P), model.params)
    worst = 0.0
    for name in names or model.params.names():
        base = model.params[name]
        flat = [np.unravel_index(i, base.shape) for i in range(min(base.size, max_entries))]
        for idx in flat:
            def f(v):
                P = {k: v if k == name else model.params[k] for k in model.params.names()}
                return float(reference(P).data)
            orig = base[idx]
            plus, minus = base.copy(), base.copy()
            plus[idx] = orig + h
            minus[idx] = orig - h
            num = (f(plus) - f(minus)) / (2 * h)
            ana = grads[name][idx]
            err = abs(num - ana) / max(1e-6, abs(num) + abs(ana))
            worst = max(worst, err)
    return worst


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
