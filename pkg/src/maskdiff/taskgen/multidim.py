"""Three-dimensional integer classification datasets (labels Above / Below)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError

KINDS = ("nonlinear", "swiss-roll", "moons", "circles")
ORDERINGS = ("random", "decreasing-distance", "increasing-distance")
POSITIVE, NEGATIVE = "Above", "Below"
N_SEEDS = 5
MOON_NOISE = 0.1
CIRCLE_NOISE = 0.1
CIRCLE_FACTOR = 0.5


@dataclass
class MultiDimDataset:
    kind: str
    seed: int
    train_x: np.ndarray  # (n_train, 3) int
    train_y: list[str]
    test_x: np.ndarray  # (n_test, 3) int
    test_y: list[str]

    def records(self, split="train") -> list[dict]:
        xs, ys = (self.train_x, self.train_y) if split == "train" else (self.test_x, self.test_y)
        return [{"coords": [int(v) for v in x], "label": y} for x, y in zip(xs, ys)]


def _moons(n: int, rng):
    half = n // 2
    a = rng.uniform(0, np.pi, half)
    b = rng.uniform(0, np.pi, n - half)
    outer = np.c_[np.cos(a), np.sin(a)]
    inner = np.c_[1 - np.cos(b), 1 - np.sin(b) - 0.5]
    x = np.r_[outer, inner] + rng.normal(0, MOON_NOISE, (n, 2))
    y = np.r_[np.zeros(half, int), np.ones(n - half, int)]
    return x, y


def _circles(n: int, rng):
    half = n // 2
    a = rng.uniform(0, 2 * np.pi, half)
    b = rng.uniform(0, 2 * np.pi, n - half)
    outer = np.c_[np.cos(a), np.sin(a)]
    inner = CIRCLE_FACTOR * np.c_[np.cos(b), np.sin(b)]
    x = np.r_[outer, inner] + rng.normal(0, CIRCLE_NOISE, (n, 2))
    y = np.r_[np.zeros(half, int), np.ones(n - half, int)]
    return x, y


def _swiss_roll(n: int, rng):
    t = 1.5 * np.pi * (1 + 2 * rng.random(n))
    x = np.c_[t * np.cos(t), 21 * rng.random(n), t * np.sin(t)]
    return x, (t > np.median(t)).astype(int)


def _nonlinear(n: int, rng):
    base = rng.integers(1, 101, size=(n, 3))
    b = base.astype(np.float64)
    feats = np.c_[b, b**2, b[:, 0] * b[:, 1], b[:, 0] * b[:, 2], b[:, 1] * b[:, 2]]
    feats = (feats - feats.mean(axis=0)) / feats.std(axis=0)
    w = rng.normal(size=feats.shape[1])
    prob = 1.0 / (1.0 + np.exp(-(feats @ w)))
    return base, (prob > 0.5).astype(int)


def scale_to_int(x: np.ndarray, lo: int = 1, hi: int = 100) -> np.ndarray:
    """Min-max rescale each column onto the integers lo..hi."""
    mn, mx = x.min(axis=0), x.max(axis=0)
    span = np.where(mx > mn, mx - mn, 1.0)
    return np.floor(lo + (hi - lo) * (x - mn) / span + 0.5).astype(np.int64)


def gen_multidim_dataset(kind: str, seed: int, n_train: int = 100, n_test: int = 1000) -> MultiDimDataset:
    """Class-balanced train/test splits drawn from one generated pool."""
    if kind not in KINDS:
        raise ConfigError(f"unknown dataset kind {kind!r}; expected one of {KINDS}")
    if n_train % 2 or n_test % 2:
        raise ConfigError("split sizes must be even for exact class balance")
    rng = np.random.default_rng([seed, KINDS.index(kind), 4242])
    need = (n_train + n_test) // 2
    pool = 4 * (n_train + n_test)
    while True:
        if kind == "nonlinear":
            coords, y = _nonlinear(pool, rng)
        else:
            x, y = {"swiss-roll": _swiss_roll, "moons": _moons, "circles": _circles}[kind](pool, rng)
            coords = scale_to_int(x)
            if coords.shape[1] < 3:
                coords = np.c_[coords, rng.integers(1, 101, size=(pool, 3 - coords.shape[1]))]
        if min(np.sum(y == 0), np.sum(y == 1)) >= need:
            break
        pool *= 2
    pos = rng.permutation(np.flatnonzero(y == 1))[:need]
    neg = rng.permutation(np.flatnonzero(y == 0))[:need]
    ht, hs = n_train // 2, n_test // 2
    train = rng.permutation(np.r_[pos[:ht], neg[:ht]])
    test = rng.permutation(np.r_[pos[ht : ht + hs], neg[ht : ht + hs]])

    def lab(idx):
        return [POSITIVE if y[i] == 1 else NEGATIVE for i in idx]

    return MultiDimDataset(kind, seed, coords[train], lab(train), coords[test], lab(test))


def all_multidim_datasets(n_seeds: int = N_SEEDS, **kw) -> list[MultiDimDataset]:
    return [gen_multidim_dataset(k, s, **kw) for k in KINDS for s in range(n_seeds)]


def order_examples(points: np.ndarray, scheme: str, test_point, rng: np.random.Generator | None = None) -> np.ndarray:
    """Index order for the in-context points.

    ``decreasing-distance`` puts the farthest point first and the nearest
    last; ``increasing-distance`` is the reverse. Ties keep input order.
    """
    pts = np.asarray(points, dtype=np.float64)
    if scheme == "random":
        if rng is None:
            raise ConfigError("random ordering needs an rng")
        return rng.permutation(len(pts))
    d = np.linalg.norm(pts - np.asarray(test_point, dtype=np.float64), axis=1)
    if scheme == "decreasing-distance":
        return np.argsort(-d, kind="stable")
    if scheme == "increasing-distance":
        return np.argsort(d, kind="stable")
    raise ConfigError(f"unknown ordering {scheme!r}; expected one of {ORDERINGS}")


def format_point(coords, label: str | None = None) -> str:
    """``Input: x y z\\nLabel:[L].\\n\\n``, or just the question part when unlabeled."""
    head = "Input: " + " ".join(str(int(c)) for c in coords) + "\nLabel:["
    return head if label is None else f"{head}{label}].\n\n"
