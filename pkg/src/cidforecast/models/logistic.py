"""L2-penalised logistic regression fitted by damped Newton iterations."""
from __future__ import annotations

import numpy as np
from scipy.special import expit

from .base import Classifier, Standardizer, laplace_prior, logit, register


def objective(w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray, lam: float):
    """Mean log-loss plus (lam/2)||w||^2, with its gradient as (grad_w, grad_b)."""
    z = X @ w + b
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * lam * (w @ w))
    r = expit(z) - y
    return loss, X.T @ r / len(y) + lam * w, float(r.mean())


@register
class LogisticModel(Classifier):
    kind = "logistic"

    def __init__(self, weights, bias: float, lam: float, standardizer: Standardizer,
                 layout=None, degenerate: bool = False, n_iter: int = 0, converged: bool = True):
        super().__init__(layout, degenerate)
        self.weights = np.asarray(weights, float)
        self.bias = float(bias)
        self.lam = float(lam)
        self.standardizer = standardizer
        self.n_iter = n_iter
        self.converged = converged

    @property
    def n_features(self) -> int:
        return len(self.weights)

    def decision(self, X) -> np.ndarray:
        return self.standardizer(X) @ self.weights + self.bias

    def _raw_proba(self, X):
        return expit(self.decision(X))

    def _payload(self):
        return {"weights": self.weights.tolist(), "bias": self.bias, "lambda": self.lam,
                "standardizer": self.standardizer.to_dict(), "n_iter": self.n_iter,
                "converged": self.converged}

    @classmethod
    def from_dict(cls, d):
        return cls(d["weights"], d["bias"], d["lambda"], Standardizer.from_dict(d["standardizer"]),
                   d["layout"], d["degenerate"], d["n_iter"], d["converged"])


def fit_logistic(X, y, lam: float = 1e-2, tol: float = 1e-6, max_iter: int = 1000,
                 price_mask=None, layout=None) -> LogisticModel:
    """Fit on features ``X`` and 0/1 labels ``y``.

    Columns not flagged in ``price_mask`` are standardised with the training
    mean and sd. A single-class training set yields a constant model at the
    add-one smoothed class share.
    """
    X = np.asarray(X, float)
    y = np.asarray(y, float)
    n, F = X.shape
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    if not np.isfinite(X).all():
        raise ValueError("features must be finite")
    std = Standardizer.fit(X, price_mask)
    if n == 0 or y.min() == y.max():
        return LogisticModel(np.zeros(F), logit(laplace_prior(y)), lam, std, layout,
                             degenerate=True)
    Z = std(X)
    w, b = np.zeros(F), logit(float(np.clip(y.mean(), 1e-6, 1 - 1e-6)))
    f, gw, gb = objective(w, b, Z, y, lam)
    reg = np.r_[np.full(F, lam), 0.0]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        g = np.r_[gw, gb]
        if np.max(np.abs(g)) <= tol:
            converged = True
            it -= 1
            break
        p = expit(Z @ w + b)
        s = p * (1.0 - p) / n
        H = np.empty((F + 1, F + 1))
        H[:F, :F] = (Z * s[:, None]).T @ Z
        H[:F, F] = H[F, :F] = Z.T @ s
        H[F, F] = s.sum()
        H[np.diag_indices(F + 1)] += reg
        try:
            step = -np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = -np.linalg.lstsq(H, g, rcond=None)[0]
        if not g @ step < 0:
            step = -g
        t = 1.0
        for _ in range(60):
            w_new, b_new = w + t * step[:F], b + t * step[F]
            f_new, gw_new, gb_new = objective(w_new, b_new, Z, y, lam)
            if f_new <= f + 1e-4 * t * (g @ step):
                break
            t *= 0.5
        else:
            break  # no descent possible at machine precision
        w, b, f, gw, gb = w_new, b_new, f_new, gw_new, gb_new
    else:
        converged = np.max(np.abs(np.r_[gw, gb])) <= tol
    return LogisticModel(w, b, lam, std, layout, n_iter=it, converged=bool(converged))
