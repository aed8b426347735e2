"""Newton-boosted regression trees on binary log-loss, plus the PLS pipeline."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .base import Classifier, Standardizer, laplace_prior, logit, register
from .pls import PlsTransform, fit_pls

HESS_EPS = 1e-6


@dataclass(frozen=True)
class GbdtParams:
    n_trees: int = 200
    learning_rate: float = 0.05
    max_depth: int = 4
    min_samples_leaf: int = 20
    reg_lambda: float = HESS_EPS

    def __post_init__(self):
        if self.n_trees < 0 or self.max_depth < 0 or self.min_samples_leaf < 1:
            raise ValueError("invalid tree hyperparameters")
        if not self.learning_rate > 0:
            raise ValueError("learning rate must be positive")


@dataclass(frozen=True)
class Tree:
    """Flat node arrays; ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        while True:
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                return node
            idx = np.flatnonzero(inner)
            go_left = X[idx, f[idx]] <= self.threshold[node[idx]]
            node[idx] = np.where(go_left, self.left[node[idx]], self.right[node[idx]])

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    @property
    def depth(self) -> int:
        depth = np.zeros(len(self.feature), int)
        for i in range(len(self.feature)):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in
                ("feature", "threshold", "left", "right", "value", "n_samples")}

    @classmethod
    def from_dict(cls, d) -> "Tree":
        ints = ("feature", "left", "right", "n_samples")
        return cls(**{k: np.array(d[k], dtype=np.int64 if k in ints else float)
                      for k in ("feature", "threshold", "left", "right", "value", "n_samples")})


def split_gain(GL, HL, GR, HR, lam: float = HESS_EPS):
    G, H = GL + GR, HL + HR
    return GL * GL / (HL + lam) + GR * GR / (HR + lam) - G * G / (H + lam)


def _grow_tree(XS: np.ndarray, order: np.ndarray, g: np.ndarray, h: np.ndarray,
               params: GbdtParams) -> Tree:
    """Exact greedy tree on presorted columns.

    ``order`` is F x n: row f lists sample indices by ascending X[:, f], and
    ``XS`` holds the matching sorted values. A node owns the same position
    range in every row; after a split each row is stably partitioned so the
    children again own contiguous ranges.
    """
    F, n = order.shape
    msl, lam = params.min_samples_leaf, params.reg_lambda
    order, XS = order.copy(), XS.copy()
    rows = np.arange(F)[:, None]
    feature, threshold, left, right, value, counts = [], [], [], [], [], []

    def new_node(a, b):
        idx = order[0, a:b]
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(-g[idx].sum() / (h[idx].sum() + HESS_EPS))
        counts.append(b - a)
        return len(feature) - 1

    frontier = [(new_node(0, n), 0, n)]
    for _ in range(params.max_depth):
        nxt = []
        for node, a, b in frontier:
            m = b - a
            if m < 2 * msl or F == 0:
                continue
            seg, xs = order[:, a:b], XS[:, a:b]
            GL = np.cumsum(g[seg], axis=1)
            HL = np.cumsum(h[seg], axis=1)
            Gt, Ht = g[seg[0]].sum(), h[seg[0]].sum()
            # children part of the gain; the parent term is constant per node
            score = GL * GL
            score /= HL + lam
            GL -= Gt
            HL -= Ht
            GL *= GL
            HL *= -1.0
            HL += lam
            GL /= HL
            score += GL
            lo, hi = msl - 1, m - msl        # positions leaving >= msl on each side
            window = score[:, lo:hi]
            window[xs[:, lo:hi] >= xs[:, lo + 1:hi + 1]] = -np.inf
            # row-major argmax: lowest feature, then lowest threshold, wins ties
            best = int(np.argmax(window))
            f, i = divmod(best, hi - lo)
            i += lo
            if not score[f, i] - Gt * Gt / (Ht + lam) > 0.0:
                continue
            goes_left = np.zeros(n, bool)
            goes_left[seg[f, : i + 1]] = True
            mask = goes_left[seg]
            cut_n = i + 1
            dest = np.where(mask, np.cumsum(mask, axis=1) - 1, cut_n + np.cumsum(~mask, axis=1) - 1)
            new_seg = np.empty_like(seg)
            new_xs = np.empty_like(xs)
            new_seg[rows, dest] = seg
            new_xs[rows, dest] = xs
            order[:, a:b] = new_seg
            XS[:, a:b] = new_xs
            feature[node] = f
            threshold[node] = float(xs[f, i])
            left[node] = new_node(a, a + cut_n)
            right[node] = new_node(a + cut_n, b)
            nxt += [(left[node], a, a + cut_n), (right[node], a + cut_n, b)]
        frontier = nxt
        if not frontier:
            break
    return Tree(np.array(feature, np.int64), np.array(threshold, float),
                np.array(left, np.int64), np.array(right, np.int64),
                np.array(value, float), np.array(counts, np.int64))


def log_loss(y, raw) -> float:
    return float(np.mean(np.logaddexp(0.0, raw) - y * raw))


@register
class GbdtModel(Classifier):
    kind = "gbdt"

    def __init__(self, trees, base_score: float, params: GbdtParams, n_features: int,
                 layout=None, degenerate: bool = False, train_loss=None):
        super().__init__(layout, degenerate)
        self.trees = list(trees)
        self.base_score = float(base_score)
        self.params = params
        self._n_features = int(n_features)
        self.train_loss = list(train_loss or [])

    @property
    def n_features(self) -> int:
        return self._n_features

    def decision(self, X) -> np.ndarray:
        raw = np.full(len(X), self.base_score)
        for tree in self.trees:
            raw += self.params.learning_rate * tree.predict(X)
        return raw

    def _raw_proba(self, X):
        return expit(self.decision(X))

    def _payload(self):
        return {"base_score": self.base_score, "params": self.params.__dict__,
                "n_features": self._n_features, "trees": [t.to_dict() for t in self.trees],
                "train_loss": self.train_loss}

    @classmethod
    def from_dict(cls, d):
        return cls([Tree.from_dict(t) for t in d["trees"]], d["base_score"],
                   GbdtParams(**d["params"]), d["n_features"], d["layout"], d["degenerate"],
                   d["train_loss"])


def fit_gbdt(X, y, params: GbdtParams = GbdtParams(), layout=None) -> GbdtModel:
    """Boost ``params.n_trees`` trees; ``train_loss`` records the loss after each round."""
    X = np.asarray(X, float)
    y = np.asarray(y, float)
    n, F = X.shape
    base = logit(laplace_prior(y))
    if n == 0 or y.min() == y.max():
        return GbdtModel([], base, params, F, layout, degenerate=True)
    XT = np.ascontiguousarray(X.T)
    order = np.argsort(XT, axis=1, kind="stable")
    XS = np.take_along_axis(XT, order, axis=1)
    raw = np.full(n, base)
    trees, losses = [], [log_loss(y, raw)]
    for _ in range(params.n_trees):
        p = expit(raw)
        tree = _grow_tree(XS, order, p - y, p * (1.0 - p), params)
        raw = raw + params.learning_rate * tree.predict(X)
        trees.append(tree)
        losses.append(log_loss(y, raw))
    return GbdtModel(trees, base, params, F, layout, train_loss=losses)


@register
class PlsGbdtModel(Classifier):
    """Standardise exogenous columns, project with PLS, classify with boosted trees."""

    kind = "pls_gbdt"

    def __init__(self, standardizer: Standardizer, pls: PlsTransform, gbdt: GbdtModel,
                 layout=None, degenerate: bool = False):
        super().__init__(layout, degenerate)
        self.standardizer = standardizer
        self.pls = pls
        self.gbdt = gbdt

    @property
    def n_features(self) -> int:
        return len(self.pls.x_means)

    def scores(self, X) -> np.ndarray:
        return self.pls.transform(self.standardizer(X))

    def _raw_proba(self, X):
        return self.gbdt._raw_proba(self.scores(X))

    def _payload(self):
        return {"standardizer": self.standardizer.to_dict(), "pls": self.pls.to_dict(),
                "gbdt": self.gbdt.to_dict()}

    @classmethod
    def from_dict(cls, d):
        from .base import model_from_dict
        return cls(Standardizer.from_dict(d["standardizer"]), PlsTransform.from_dict(d["pls"]),
                   model_from_dict(d["gbdt"]), d["layout"], d["degenerate"])


def fit_pls_gbdt(X, y, target, params: GbdtParams = GbdtParams(), price_mask=None,
                 layout=None) -> PlsGbdtModel:
    """``target`` is the regression target for PLS (normalised future price), ``y`` the labels."""
    X = np.asarray(X, float)
    std = Standardizer.fit(X, price_mask)
    Z = std(X)
    if len(X) < 2:
        pls = PlsTransform(np.zeros(X.shape[1]), np.zeros((X.shape[1], 0)),
                           np.zeros((X.shape[1], 0)), np.zeros(0), True)
    else:
        pls = fit_pls(Z, target)
    gbdt = fit_gbdt(pls.transform(Z), y, params)
    return PlsGbdtModel(std, pls, gbdt, layout, degenerate=gbdt.degenerate or pls.degenerate)
