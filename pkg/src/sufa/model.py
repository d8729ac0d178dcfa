"""Covariance structure of the shared-subspace multi-study factor model.

Study s with q shared factors and q_s study-specific factors has
marginal covariance

    Sigma_s = Lambda Lambda' + (Lambda A_s)(Lambda A_s)' + Delta
            = Lambda (I_q + A_s A_s') Lambda' + Delta

where Lambda is d x q, A_s is q x q_s and Delta is diagonal.  The
diagonal is carried on log scale (log_delta = log of the diagonal
entries) so samplers can move in an unconstrained space.  All heavy
inverse/determinant work routes through the low-rank Woodbury forms;
no dense d x d matrix is ever inverted directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import DimensionError, DomainError, IllConditionedError, NumericError

# condition estimate above which the k x k Woodbury core counts as singular
COND_LIMIT = 1e12


# =========================================================================
# containers
# =========================================================================

@dataclass(frozen=True)
class ModelDims:
    """Dimensions of a multi-study design.

    Args:
        d: number of observed features.
        q: number of shared factors, 1 <= q < d.
        q_s: per-study factor counts (length S, entries >= 0).
        n_s: optional per-study sample counts.  Zero is allowed so that
            no-data runs (prior reproduction checks) remain expressible.
    """

    d: int
    q: int
    q_s: tuple[int, ...]
    n_s: tuple[int, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "q_s", tuple(int(v) for v in self.q_s))
        if self.n_s is not None:
            object.__setattr__(self, "n_s", tuple(int(v) for v in self.n_s))
        if self.d < 1:
            raise DimensionError(f"d must be >= 1, got {self.d}")
        if not 1 <= self.q < self.d:
            raise DimensionError(f"need 1 <= q < d, got q={self.q}, d={self.d}")
        if len(self.q_s) < 1:
            raise DimensionError("need at least one study")
        if any(v < 0 for v in self.q_s):
            raise DimensionError(f"q_s entries must be >= 0, got {self.q_s}")
        if self.n_s is not None:
            if len(self.n_s) != len(self.q_s):
                raise DimensionError("n_s and q_s must have equal length")
            if any(v < 0 for v in self.n_s):
                raise DimensionError(f"n_s entries must be >= 0, got {self.n_s}")

    @property
    def n_studies(self) -> int:
        return len(self.q_s)

    @property
    def n_params(self) -> int:
        return self.d * self.q + self.d + self.q * sum(self.q_s)


@dataclass
class ParamSet:
    """One point in parameter space.

    Fields:
        lam: d x q shared loading matrix.
        log_delta: length-d log of the idiosyncratic variances.
        a_list: per-study q x q_s loading matrices (possibly q x 0).
    """

    lam: np.ndarray
    log_delta: np.ndarray
    a_list: list[np.ndarray]

    def __post_init__(self):
        self.lam = np.asarray(self.lam, dtype=float)
        self.log_delta = np.asarray(self.log_delta, dtype=float)
        self.a_list = [np.asarray(a, dtype=float) for a in self.a_list]
        d, q = self.lam.shape
        if self.log_delta.shape != (d,):
            raise DimensionError(
                f"log_delta has shape {self.log_delta.shape}, expected ({d},)")
        for s, a in enumerate(self.a_list):
            if a.ndim != 2 or a.shape[0] != q:
                raise DimensionError(
                    f"A_{s} has shape {a.shape}, expected ({q}, q_s)")

    @property
    def dims(self) -> ModelDims:
        d, q = self.lam.shape
        return ModelDims(d, q, tuple(a.shape[1] for a in self.a_list))

    def copy(self) -> "ParamSet":
        return ParamSet(self.lam.copy(), self.log_delta.copy(),
                        [a.copy() for a in self.a_list])

    def pack(self) -> np.ndarray:
        """Flatten to a single vector (lam row-major, log_delta, each A_s)."""
        parts = [self.lam.ravel(), self.log_delta]
        parts += [a.ravel() for a in self.a_list]
        return np.concatenate(parts)

    @classmethod
    def unpack(cls, vec: np.ndarray, dims: ModelDims) -> "ParamSet":
        """Inverse of pack for the given dimensions."""
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (dims.n_params,):
            raise DimensionError(
                f"vector has shape {vec.shape}, expected ({dims.n_params},)")
        d, q = dims.d, dims.q
        lam = vec[:d * q].reshape(d, q)
        log_delta = vec[d * q:d * q + d]
        a_list, at = [], d * q + d
        for qs in dims.q_s:
            a_list.append(vec[at:at + q * qs].reshape(q, qs))
            at += q * qs
        return cls(lam, log_delta, a_list)


@dataclass(frozen=True)
class StudySummary:
    """Sufficient statistics of one study: W = Y'Y and the sample count.

    The sampler touches data only through these, which is what makes
    iteration cost independent of sample size.
    """

    w: np.ndarray
    n: int

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "n", int(self.n))
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise DimensionError(f"W must be square, got shape {w.shape}")
        if not np.isfinite(w).all():
            raise NumericError("W contains non-finite entries")
        scale = max(1.0, float(np.abs(w).max()))
        if np.abs(w - w.T).max() > 1e-8 * scale:
            raise DomainError("W must be symmetric")
        if self.n < 0:
            raise DomainError(f"n must be >= 0, got {self.n}")

    @property
    def d(self) -> int:
        return self.w.shape[0]


# =========================================================================
# covariance assembly
# =========================================================================

def _check_study_index(params: ParamSet, study: int) -> None:
    if not 0 <= study < len(params.a_list):
        raise DimensionError(
            f"study index {study} out of range for {len(params.a_list)} studies")


def shared_covariance(params: ParamSet) -> np.ndarray:
    """Covariance attributed to the shared factors plus noise.

    Returns Lambda Lambda' + Delta, symmetrized.
    """
    sig = params.lam @ params.lam.T + np.diag(np.exp(params.log_delta))
    return 0.5 * (sig + sig.T)


def marginal_covariance(params: ParamSet, study: int) -> np.ndarray:
    """Marginal covariance of one study.

    Returns Lambda Lambda' + (Lambda A_s)(Lambda A_s)' + Delta,
    symmetrized after assembly.
    """
    _check_study_index(params, study)
    lam_a = params.lam @ params.a_list[study]
    sig = (params.lam @ params.lam.T + lam_a @ lam_a.T
           + np.diag(np.exp(params.log_delta)))
    return 0.5 * (sig + sig.T)


def correlation_matrix(cov: np.ndarray) -> np.ndarray:
    """Rescale a covariance matrix to unit diagonal.

    Raises a domain error listing the offending indices when the
    diagonal is not strictly positive.
    """
    cov = np.asarray(cov, dtype=float)
    diag = np.diag(cov)
    bad = np.flatnonzero(diag <= 0)
    if bad.size:
        raise DomainError(
            f"covariance diagonal must be positive; offending indices {bad.tolist()}")
    scale = 1.0 / np.sqrt(diag)
    corr = cov * scale[:, None] * scale[None, :]
    corr = 0.5 * (corr + corr.T)
    np.fill_diagonal(corr, 1.0)
    return corr


def sufficient_stats(y: np.ndarray) -> StudySummary:
    """Reduce an n x d data matrix to its Gram summary W = Y'Y.

    Rows are observations.  The result is symmetrized to remove
    accumulation asymmetry.
    """
    y = np.asarray(y, dtype=float)
    if y.ndim != 2:
        raise DimensionError(f"data must be 2-d, got shape {y.shape}")
    if y.shape[0] < 1:
        raise DimensionError("data must contain at least one row")
    if not np.isfinite(y).all():
        raise NumericError("data contains non-finite entries")
    w = y.T @ y
    if not np.isfinite(w).all():
        raise NumericError("overflow while accumulating Y'Y")
    return StudySummary(0.5 * (w + w.T), y.shape[0])


# =========================================================================
# low-rank (Woodbury) inverse and determinant
# =========================================================================

def _woodbury_core(lam_tilde: np.ndarray, log_delta: np.ndarray):
    """Shared pieces: Delta^{-1}, U = Delta^{-1} Lam~, Cholesky of the core.

    The core is M = I_k + Lam~' Delta^{-1} Lam~, a k x k SPD matrix.
    """
    lam_tilde = np.asarray(lam_tilde, dtype=float)
    log_delta = np.asarray(log_delta, dtype=float)
    if lam_tilde.ndim != 2 or lam_tilde.shape[0] != log_delta.shape[0]:
        raise DimensionError(
            f"shape mismatch: loadings {lam_tilde.shape}, log_delta {log_delta.shape}")
    d_inv = np.exp(-log_delta)
    if not np.isfinite(d_inv).all():
        raise NumericError("exp(-log_delta) overflowed")
    k = lam_tilde.shape[1]
    if k == 0:
        return d_inv, lam_tilde, None, None
    u = lam_tilde * d_inv[:, None]
    core = np.eye(k) + lam_tilde.T @ u
    core = 0.5 * (core + core.T)
    if not np.isfinite(core).all():
        raise NumericError("Woodbury core is non-finite")
    if np.linalg.cond(core) > COND_LIMIT:
        raise IllConditionedError(
            f"Woodbury core condition exceeds {COND_LIMIT:.0e}")
    cf = linalg.cho_factor(core, lower=True)
    return d_inv, u, core, cf


def woodbury_inverse(lam_tilde: np.ndarray, log_delta: np.ndarray) -> np.ndarray:
    """Inverse of Lam~ Lam~' + diag(exp(log_delta)) via the k x k core.

    Cost is O(k^2 d) plus the O(k d^2) assembly of the returned dense
    matrix; no general d x d system is solved.
    """
    d_inv, u, _, cf = _woodbury_core(lam_tilde, log_delta)
    if cf is None:
        return np.diag(d_inv)
    ru = linalg.cho_solve(cf, u.T)  # M^{-1} Lam~' Delta^{-1}, k x d
    inv = np.diag(d_inv) - u @ ru
    return 0.5 * (inv + inv.T)


def woodbury_logdet(lam_tilde: np.ndarray, log_delta: np.ndarray) -> float:
    """log det of Lam~ Lam~' + diag(exp(log_delta)).

    Uses the matrix determinant lemma: log|M| + sum(log_delta).
    """
    _, _, _, cf = _woodbury_core(lam_tilde, log_delta)
    base = float(np.sum(np.asarray(log_delta, dtype=float)))
    if cf is None:
        return base
    chol = cf[0]
    return base + 2.0 * float(np.sum(np.log(np.diag(chol))))
