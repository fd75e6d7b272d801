import os
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gaminet.data import Dataset, FeatureMeta
from gaminet.model import CategoricalEffect, GamiNetModel
from gaminet.nn_core import DenseLayer, Subnetwork, make_subnetwork, subnet_backward, subnet_forward

# recorded outputs of scripts/run_acceptance_runs.sh
RESULTS = Path(os.environ.get("GAMINET_RESULTS", Path(__file__).resolve().parent.parent / "results"))

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def affine_net(slope, intercept, arity=1):
    """Single identity layer computing slope . x + intercept."""
    w = np.atleast_2d(np.asarray(slope, dtype=float))
    return Subnetwork([DenseLayer(w, np.array([float(intercept)]), "identity")], arity)


def numeric_meta(p, prefix="x"):
    return [FeatureMeta(f"{prefix}{i + 1}", "numerical", 0.0, 1.0) for i in range(p)]


def random_model(rng, p=4, n_pairs=2, categorical=(), hidden=(6, 5), activation="tanh", link="identity"):
    """Random model over ``p`` features; indices in ``categorical`` get 3 levels."""
    meta = []
    for j in range(p):
        if j in categorical:
            meta.append(FeatureMeta(f"c{j}", "categorical", levels=["a", "b", "c"]))
        else:
            meta.append(FeatureMeta(f"x{j}", "numerical", -2.0, 3.0))
    mains = {}
    for j in range(p):
        if j in categorical:
            mains[j] = CategoricalEffect(rng.normal(size=3), float(rng.normal()))
        else:
            net = make_subnetwork(1, hidden, rng, activation)
            net.output_offset = float(rng.normal())
            mains[j] = net
    pairs = {}
    all_pairs = [(j, k) for j in range(p) for k in range(j + 1, p)]
    for idx in rng.choice(len(all_pairs), size=min(n_pairs, len(all_pairs)), replace=False):
        j, k = all_pairs[idx]
        width = meta[j].width + meta[k].width
        net = make_subnetwork(width, hidden, rng, activation, input_arity=2)
        for layer in net.layers:
            layer.biases[:] = rng.normal(scale=0.3, size=layer.biases.shape)
        pairs[(j, k)] = net
    return GamiNetModel(meta, link, float(rng.normal()), mains, pairs)


def random_inputs(rng, model, n):
    cols = []
    for m in model.meta:
        if m.kind == "categorical":
            cols.append(rng.integers(0, len(m.levels), n).astype(float))
        else:
            cols.append(rng.random(n))
    return np.column_stack(cols)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_dataset(x, y, task="regression", meta=None):
    x = np.asarray(x, dtype=float)
    return Dataset(x, np.asarray(y, dtype=float), task, meta or numeric_meta(x.shape[1]))


def finite_difference_check(net, x, up, step=1e-5, floor=1e-6):
    """Worst relative error of analytic gradients against central differences.

    Errors are relative to the larger of the two magnitudes, floored at
    ``floor``: at step 1e-5 the central difference itself carries round-off of
    about 1e-11, so gradients far below the floor cannot be resolved.
    """
    _, cache = subnet_forward(net, x)
    grads = subnet_backward(net, cache, up)
    worst = 0.0
    for p, g in zip(net.parameters(), grads):
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + step
            fp = float(np.dot(up, subnet_forward(net, x)[0]))
            p[idx] = old - step
            fm = float(np.dot(up, subnet_forward(net, x)[0]))
            p[idx] = old
            num = (fp - fm) / (2 * step)
            worst = max(worst, abs(num - g[idx]) / max(abs(num), abs(g[idx]), floor))
    return worst


def brute_force_score(r, cj, ck):
    """Minimum four-quadrant RSS / n by enumerating every cut pair, in exact rationals."""
    r = [Fraction(v) for v in r]
    n = len(r)
    nj, nk = max(cj) + 1, max(ck) + 1

    def rss(groups):
        out = Fraction(0)
        for g in groups:
            if g:
                mean = sum(g) / len(g)
                out += sum((v - mean) ** 2 for v in g)
        return out

    best = rss([r])
    if nj >= 2 and nk >= 2:
        best = None
        for a in range(1, nj):
            for b in range(1, nk):
                quads = [[], [], [], []]
                for v, u, w in zip(r, cj, ck):
                    quads[2 * (u >= a) + (w >= b)].append(v)
                val = rss(quads)
                best = val if best is None or val < best else best
    return float(best / n)


def pytest_terminal_summary(terminalreporter):
    import sys
    lines = getattr(sys.modules.get("test_acceptance"), "VERDICTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
