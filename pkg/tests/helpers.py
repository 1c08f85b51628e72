"""Independent oracles and frozen stubs shared by the test modules.

Oracles here are deliberately naive re-derivations (brute force, explicit
loops, closed forms). They do not import the code they check.
"""
from __future__ import annotations

import itertools
import math

import numpy as np


# --------------------------------------------------------------------------
# stub rankers


class AdditiveStub:
    """``acc(mask) = base - sum of w[j] over masked j`` (plus optional pair bonuses)."""

    def __init__(self, w, base=0.9, pair_bonus=None):
        self.w = np.asarray(w, dtype=float)
        self.base = base
        self.pair_bonus = dict(pair_bonus or {})

    @property
    def d(self):
        return len(self.w)

    def accuracy(self, x, y, mask=()):
        mask = set(int(i) for i in mask)
        acc = self.base - sum(self.w[j] for j in mask)
        for (a, b), bonus in self.pair_bonus.items():
            if a in mask and b in mask:
                acc += bonus
        return float(acc)


class SoftLinearStub:
    """Frozen random linear-softmax model; score = mean true-class probability.

    Non-additive in the mask and practically tie-free.
    """

    def __init__(self, d, n_classes=3, seed=0):
        rng = np.random.default_rng(seed)
        self.W = rng.normal(size=(2 * d, n_classes))
        self.d = d

    def accuracy(self, x, y, mask=()):
        x = np.array(x, dtype=float)
        x[:, :, sorted(mask)] = 0
        z = x.reshape(len(x), -1) @ self.W
        z -= z.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        return float(p[np.arange(len(y)), y].mean())


class HardLinearStub(SoftLinearStub):
    """Same model scored by plain argmax accuracy (ties between candidates are common)."""

    def accuracy(self, x, y, mask=()):
        x = np.array(x, dtype=float)
        x[:, :, sorted(mask)] = 0
        return float(np.mean((x.reshape(len(x), -1) @ self.W).argmax(axis=1) == y))


def stub_data(d, n=40, n_classes=3, seed=0):
    rng = np.random.default_rng(seed + 1000)
    return rng.normal(size=(n, 2, d)), rng.integers(0, n_classes, n)


# --------------------------------------------------------------------------
# selection oracles


def greedy_oracle(ranker, x, y, d, k):
    """Sequential greedy: every step re-scores all remaining indices from scratch."""
    chosen = []
    for _ in range(k):
        best_acc, best_j = math.inf, None
        for j in range(d):
            if j in chosen:
                continue
            acc = ranker.accuracy(x, y, chosen + [j])
            if acc < best_acc:  # strict: the first (lowest) index wins ties
                best_acc, best_j = acc, j
        chosen.append(best_j)
    return chosen


def holistic_oracle(rankers, x, y, d, k):
    """Tier procedure re-derived as a lexicographic minimum.

    Key per candidate: (-number of candidate sets holding it, sum of its
    accuracies over those sets, index).
    """
    chosen = []
    for t in range(k):
        budget = k - t
        remaining = [j for j in range(d) if j not in chosen]
        accs = [{j: r.accuracy(x, y, chosen + [j]) for j in remaining} for r in rankers]
        sets = [set(sorted(remaining, key=lambda j: (a[j], j))[:budget]) for a in accs]
        union = set().union(*sets)

        def key(j):
            owners = [i for i in range(3) if j in sets[i]]
            return (-len(owners), sum(accs[i][j] for i in owners), j)

        chosen.append(min(union, key=key))
    return chosen


def keep_set_enumeration(score, d, k):
    """All C(d, k) index sets with their scores."""
    return {frozenset(c): score(frozenset(c)) for c in itertools.combinations(range(d), k)}


# --------------------------------------------------------------------------
# numerics


def central_difference(f, params: dict, step=1e-3):
    """Numerical gradient of scalar ``f(params)`` for every entry of every tensor."""
    grads = {}
    for name, value in params.items():
        g = np.zeros_like(value)
        for idx in np.ndindex(value.shape):
            orig = value[idx]
            value[idx] = orig + step
            fp = f(params)
            value[idx] = orig - step
            fm = f(params)
            value[idx] = orig
            g[idx] = (fp - fm) / (2 * step)
        grads[name] = g
    return grads


def qam_grid_min_distance(m):
    """Minimum distance of the unit-power square m-QAM grid, brute force."""
    side = int(round(math.sqrt(m)))
    levels = np.arange(-(side - 1), side, 2, dtype=float)
    pts = np.array([complex(a, b) for a in levels for b in levels])
    pts /= math.sqrt(np.mean(np.abs(pts) ** 2))
    diff = np.abs(pts[:, None] - pts[None, :])
    return float(diff[~np.eye(len(pts), dtype=bool)].min())


def normal_cdf(z):
    return 0.5 * (1 + math.erf(z / math.sqrt(2)))


def random_arch(seed):
    """Small random architecture drawn so that 20 seeds cover every layer kind."""
    from ewsub import neurokit as nk

    rng = np.random.default_rng(seed)
    d = int(rng.choice([6, 8, 12]))
    c = int(rng.integers(2, 4))
    specs = [nk.conv1d(c, int(rng.choice([1, 3, 5])))]
    if seed % 2 == 0:
        specs.append(nk.batchnorm())
    specs.append(nk.relu())
    if seed % 3 != 2:
        specs.append(nk.residual(nk.conv1d(c, 3), nk.batchnorm(), nk.relu()) if seed % 3 == 0
                     else nk.residual(nk.conv1d(c, 3)))
    if seed % 4 in (0, 1):
        specs.append(nk.maxpool1d(2))
    if seed % 2 == 1:
        specs.append(nk.lstm(int(rng.integers(2, 5))))
    else:
        specs.append(nk.flatten())
        specs.append(nk.dense(int(rng.integers(3, 6))))
        specs.append(nk.relu())
    specs += [nk.dense(3), nk.softmax()]
    return specs, d


def gradient_errors(seed, step=1e-5, batch=5):
    """Relative error ``|a - n| / max(|a| + |n|, 1e-5)`` per tensor for one random config.

    The floor only matters for tensors whose true gradient is identically zero
    (a conv bias feeding batchnorm), where both sides are rounding noise.
    """
    from ewsub import neurokit as nk

    specs, d = random_arch(seed)
    rng = np.random.default_rng(seed + 500)
    model = nk.Model(specs, (2, d), seed=seed, dtype=np.float64)
    x = rng.normal(size=(batch, 2, d))
    y = rng.integers(0, 3, batch)
    _, analytic, _ = nk.loss_and_grad(model, x, y)
    numeric = central_difference(lambda p: nk.loss_and_grad(model, x, y, params=p)[0], model.params, step)
    errs = {}
    for name in model.params:
        a, n = analytic[name], numeric[name]
        errs[name] = float(np.linalg.norm(a - n) / max(np.linalg.norm(a) + np.linalg.norm(n), 1e-5))
    return {s.kind for s in _walk(specs)}, errs


def _walk(specs):
    for s in specs:
        yield s
        yield from _walk(s.children)
