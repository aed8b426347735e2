"""Partial least squares by NIPALS with deflation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PlsTransform:
    x_means: np.ndarray
    weights: np.ndarray       # F x k, one unit weight vector per component
    loadings: np.ndarray      # F x k, X loadings used for deflation
    y_loadings: np.ndarray    # k
    degenerate: bool = False

    @property
    def n_components(self) -> int:
        return self.weights.shape[1]

    @property
    def rotations(self) -> np.ndarray:
        """Maps centred X straight to scores: W (P'W)^-1."""
        k = self.n_components
        if k == 0:
            return np.zeros((len(self.x_means), 0))
        return self.weights @ np.linalg.inv(self.loadings.T @ self.weights)

    def transform(self, X) -> np.ndarray:
        Xc = np.atleast_2d(np.asarray(X, float)) - self.x_means
        # replay the deflation so scores match the training recursion exactly
        T = np.empty((Xc.shape[0], self.n_components))
        for a in range(self.n_components):
            t = Xc @ self.weights[:, a]
            T[:, a] = t
            Xc = Xc - np.outer(t, self.loadings[:, a])
        return T

    def to_dict(self) -> dict:
        return {"x_means": self.x_means.tolist(), "weights": self.weights.tolist(),
                "loadings": self.loadings.tolist(), "y_loadings": self.y_loadings.tolist(),
                "degenerate": self.degenerate}

    @classmethod
    def from_dict(cls, d) -> "PlsTransform":
        F = len(d["x_means"])
        W = np.array(d["weights"], float).reshape(F, -1)
        P = np.array(d["loadings"], float).reshape(F, -1)
        return cls(np.array(d["x_means"], float), W, P, np.array(d["y_loadings"], float),
                   d["degenerate"])


def _leading_direction(X: np.ndarray) -> np.ndarray:
    _, _, vt = np.linalg.svd(X, full_matrices=False)
    v = vt[0]
    return v if v[np.argmax(np.abs(v))] > 0 else -v


def fit_pls(X, y, n_components: int | None = None, tol: float = 1e-8, max_iter: int = 500,
            resid_tol: float = 1e-10) -> PlsTransform:
    """Extract up to min(F, n-1) components against the regression target ``y``.

    Extraction stops early once the deflated X falls below ``resid_tol``
    relative to the centred X in Frobenius norm. When X'y vanishes the
    leading principal direction of the residual X is used instead.
    """
    X = np.asarray(X, float)
    Y = np.asarray(y, float).reshape(len(X), -1)
    n, F = X.shape
    if n < 2:
        raise ValueError("PLS needs at least two samples")
    x_means = X.mean(axis=0)
    Xr = X - x_means
    Yr = Y - Y.mean(axis=0)
    x_norm = np.linalg.norm(Xr)
    k_max = min(F, n - 1) if n_components is None else min(n_components, F, n - 1)
    if x_norm == 0.0:
        return PlsTransform(x_means, np.zeros((F, 0)), np.zeros((F, 0)), np.zeros(0), True)
    W, P, Q = [], [], []
    for _ in range(k_max):
        if np.linalg.norm(Xr) < resid_tol * x_norm:
            break
        u = Yr[:, np.argmax(np.sum(Yr * Yr, axis=0))]
        w = None
        for _ in range(max_iter):
            w_new = Xr.T @ u
            nw = np.linalg.norm(w_new)
            if nw <= 1e-14 * x_norm * max(np.linalg.norm(u), 1.0):
                w = _leading_direction(Xr)
                break
            w_new /= nw
            t = Xr @ w_new
            c = Yr.T @ t / (t @ t)
            u_new = Yr @ c / (c @ c) if c @ c > 0 else u
            done = w is not None and np.linalg.norm(w_new - w) < tol
            w, u = w_new, u_new
            if done or Yr.shape[1] == 1:
                break
        t = Xr @ w
        tt = t @ t
        if tt <= 0.0:
            break
        p = Xr.T @ t / tt
        q = Yr.T @ t / tt
        Xr = Xr - np.outer(t, p)
        Yr = Yr - np.outer(t, q)
        W.append(w)
        P.append(p)
        Q.append(q[0])
    W = np.array(W).T.reshape(F, -1)
    P = np.array(P).T.reshape(F, -1)
    return PlsTransform(x_means, W, P, np.array(Q, float))
