"""PCA, ridge regression and an L2-loss linear SVM.

Feature matrices may be dense ``(n, D)`` arrays or :class:`IndexFeatures`,
the sparse binary form used for forest descriptors. Both give identical
results.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .errors import DimensionMismatchError, SingleClassError, SingularSystemError

EIG_CLAMP = 1e-12


@dataclass(frozen=True)
class IndexFeatures:
    """Rows of a 0/1 matrix given by the column indices of their ones.

    ``indices`` is either an ``(n, k)`` integer array (k ones per row) or a
    list of integer sequences of varying length.
    """

    indices: object
    dim: int

    def __len__(self):
        return len(self.indices)

    def to_csr(self) -> sp.csr_matrix:
        rows = [np.asarray(r, dtype=np.int64).ravel() for r in self.indices]
        indptr = np.zeros(len(rows) + 1, dtype=np.int64)
        indptr[1:] = np.cumsum([r.size for r in rows])
        cols = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
        if cols.size and (cols.min() < 0 or cols.max() >= self.dim):
            raise DimensionMismatchError("feature index out of range")
        data = np.ones(cols.size)
        return sp.csr_matrix((data, cols, indptr), shape=(len(rows), self.dim))

    def to_dense(self) -> np.ndarray:
        return self.to_csr().toarray()


def as_matrix(features):
    """Dense ndarray or CSR matrix for any accepted feature form."""
    if isinstance(features, IndexFeatures):
        return features.to_csr()
    if sp.issparse(features):
        return features.tocsr()
    X = np.asarray(features, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    return X


def _dense(a) -> np.ndarray:
    return a.toarray() if sp.issparse(a) else np.asarray(a)


# ---------------------------------------------------------------- PCA


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    basis: np.ndarray  # (D, m), orthonormal columns
    eigenvalues: np.ndarray  # (m,), non-increasing
    total_variance: float = 0.0

    @property
    def n_components(self) -> int:
        return self.basis.shape[1]

    @property
    def dim(self) -> int:
        return self.mean.size


def _eigh_desc(A: np.ndarray):
    w, V = np.linalg.eigh(A)
    order = np.argsort(w)[::-1]
    w = w[order]
    V = V[:, order]
    w[(w < 0) & (w >= -EIG_CLAMP)] = 0.0
    w = np.maximum(w, 0.0)
    return w, V


def pca_fit(data, energy_fraction: float = 0.98, n_components: int | None = None) -> PcaModel:
    """Principal components of the rows of ``data``.

    Keeps the fewest leading components whose eigenvalues sum to at least
    ``energy_fraction`` of the total variance, or exactly ``n_components``
    when given (capped by the numerical rank). Components with numerically
    zero variance are never returned.
    """
    X = np.asarray(data, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("pca_fit needs at least 2 samples in a 2-D array")
    if not 0.0 < energy_fraction <= 1.0:
        raise ValueError("energy_fraction must lie in (0, 1]")
    n, D = X.shape
    mean = X.mean(axis=0)
    Xc = X - mean
    if n < D:
        w, V = _eigh_desc(Xc @ Xc.T / (n - 1))
    else:
        w, V = _eigh_desc(Xc.T @ Xc / (n - 1))
    w = w[: min(n - 1, D)]
    V = V[:, : w.size]
    total = float(w.sum())
    scale_ref = max(total, float(np.sum(Xc * Xc)) / (n - 1))
    rank = int(np.sum(w > 1e-10 * scale_ref)) if scale_ref > 0 else 0
    if n_components is not None:
        k = min(int(n_components), rank)
    elif rank == 0:
        k = 0
    else:
        csum = np.cumsum(w[:rank])
        k = int(np.searchsorted(csum, energy_fraction * total * (1 - 1e-12))) + 1
        k = min(k, rank)
    w = w[:k]
    if n < D:
        basis = Xc.T @ V[:, :k] / np.sqrt((n - 1) * w) if k else np.zeros((D, 0))
        if k:
            # polish orthonormality lost through the Gram route
            basis, r = np.linalg.qr(basis)
            basis = basis * np.sign(np.diag(r))
    else:
        basis = V[:, :k]
    return PcaModel(mean, np.ascontiguousarray(basis), w.copy(), total)


def pca_project(model: PcaModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.dim:
        raise DimensionMismatchError(f"expected dimension {model.dim}, got {x.shape[-1]}")
    return (x - model.mean) @ model.basis


def pca_reconstruct(model: PcaModel, p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.shape[-1] != model.n_components:
        raise DimensionMismatchError(f"expected {model.n_components} parameters, got {p.shape[-1]}")
    return model.mean + p @ model.basis.T


# ---------------------------------------------------------------- ridge


@dataclass(frozen=True)
class RidgeRegressor:
    weights: np.ndarray  # (targets, features)
    lam: float

    def predict(self, features) -> np.ndarray:
        X = as_matrix(features)
        if X.shape[1] != self.weights.shape[1]:
            raise DimensionMismatchError("feature dimension does not match the regressor")
        return np.asarray(X @ self.weights.T)


def ridge_objective(model: RidgeRegressor, features, targets) -> float:
    Y = np.asarray(targets, dtype=float)
    r = Y - model.predict(features)
    return float(np.sum(r * r) + model.lam * np.sum(model.weights**2))


def ridge_fit(features, targets, lam: float = 1.0) -> RidgeRegressor:
    """Minimize ``sum ||y_i - R x_i||^2 + lam ||R||_F^2`` over ``R``.

    Solves the ``n x n`` dual system when features outnumber samples.
    """
    X = as_matrix(features)
    Y = np.asarray(targets, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    n, D = X.shape
    if Y.shape[0] != n:
        raise DimensionMismatchError("features and targets differ in sample count")
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    if D > n:
        A = _dense(X @ X.T).astype(float)
        rhs = Y
    else:
        A = _dense(X.T @ X).astype(float)
        rhs = np.asarray(X.T @ Y)
    A[np.diag_indices_from(A)] += lam
    if lam == 0 and np.linalg.matrix_rank(A) < A.shape[0]:
        raise SingularSystemError("unregularized ridge system is rank deficient")
    try:
        sol = scipy.linalg.solve(A, rhs, assume_a="pos")
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(str(exc)) from exc
    if D > n:
        W = np.asarray(X.T @ sol).T
    else:
        W = sol.T
    return RidgeRegressor(np.ascontiguousarray(W), float(lam))


# ---------------------------------------------------------------- SVM


@dataclass(frozen=True)
class LinearSvm:
    weights: np.ndarray
    bias: float
    cost: float
    history: tuple = field(default=(), compare=False, repr=False)

    def decision(self, features) -> np.ndarray:
        X = as_matrix(features)
        return np.asarray(X @ self.weights).ravel() + self.bias


def svm_decision(model: LinearSvm, x) -> float:
    return float(model.decision(x)[0])


def svm_objective(weights, bias, features, labels, cost) -> float:
    """``0.5 ||w||^2 + cost * sum max(0, 1 - y (w.x + b))^2``."""
    X = as_matrix(features)
    y = np.asarray(labels, dtype=float)
    m = np.maximum(0.0, 1.0 - y * (np.asarray(X @ weights).ravel() + bias))
    return float(0.5 * weights @ weights + cost * m @ m)


def svm_fit(features, labels, cost: float = 1.0, tol: float = 1e-6, max_iter: int = 10000) -> LinearSvm:
    """L2-regularized, L2-loss linear SVM with an unregularized bias.

    Primal Newton iterations with conjugate-gradient inner solves and an
    Armijo backtracking line search, so the objective never increases. The
    per-iteration objective values are kept in ``history``. Stops when the
    gradient norm falls below ``tol`` times its value at the origin.
    """
    X = as_matrix(features)
    y = np.asarray(labels, dtype=float).ravel()
    n, D = X.shape
    if y.size != n:
        raise DimensionMismatchError("features and labels differ in sample count")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("labels must be +1 or -1")
    if np.all(y == y[0]):
        raise SingleClassError("SVM training needs both classes")
    if cost <= 0:
        raise ValueError("cost must be positive")
    XT = X.T.tocsr() if sp.issparse(X) else X.T

    w = np.zeros(D)
    b = 0.0

    def evaluate(w, b):
        z = np.asarray(X @ w).ravel() + b
        m = 1.0 - y * z
        active = m > 0
        f = 0.5 * w @ w + cost * np.sum(m[active] ** 2)
        coef = np.where(active, y * m, 0.0)
        gw = w - 2 * cost * np.asarray(XT @ coef).ravel()
        gb = -2 * cost * coef.sum()
        return f, gw, gb, active

    f, gw, gb, active = evaluate(w, b)
    g0 = np.sqrt(gw @ gw + gb * gb)
    history = [f]
    for _ in range(max_iter):
        gnorm = np.sqrt(gw @ gw + gb * gb)
        if gnorm <= tol * g0:
            break
        Xa = X[active]
        XaT = Xa.T.tocsr() if sp.issparse(Xa) else Xa.T

        def hess(vw, vb):
            u = np.asarray(Xa @ vw).ravel() + vb
            return vw + 2 * cost * np.asarray(XaT @ u).ravel(), 2 * cost * u.sum() + 1e-12 * vb

        dw, db = _cg(hess, -gw, -gb, tol=0.1 * gnorm, max_iter=max(50, min(D + 1, 500)))
        slope = gw @ dw + gb * db
        if slope >= 0:
            dw, db, slope = -gw, -gb, -(gnorm**2)
        step = 1.0
        while True:
            fn, gwn, gbn, act_n = evaluate(w + step * dw, b + step * db)
            if fn <= f + 1e-2 * step * slope:
                break
            step *= 0.5
            if step < 1e-14:
                fn = None
                break
        if fn is None:
            break
        w, b = w + step * dw, b + step * db
        f, gw, gb, active = fn, gwn, gbn, act_n
        history.append(f)
    return LinearSvm(w, float(b), float(cost), tuple(history))


def _cg(hess, rw, rb, tol, max_iter):
    """Conjugate gradients for ``H d = r`` on the (w, b) block vector."""
    dw = np.zeros_like(rw)
    db = 0.0
    pw, pb = rw.copy(), rb
    rr = rw @ rw + rb * rb
    for _ in range(max_iter):
        if np.sqrt(rr) <= tol:
            break
        hw, hb = hess(pw, pb)
        php = pw @ hw + pb * hb
        if php <= 0:
            break
        alpha = rr / php
        dw += alpha * pw
        db += alpha * pb
        rw = rw - alpha * hw
        rb = rb - alpha * hb
        rr_new = rw @ rw + rb * rb
        pw = rw + (rr_new / rr) * pw
        pb = rb + (rr_new / rr) * pb
        rr = rr_new
    return dw, db
