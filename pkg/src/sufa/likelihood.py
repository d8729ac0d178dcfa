"""Marginalized likelihood and posterior gradients.

Factors are integrated out analytically, so study s contributes
    -(n_s log|Sigma_s| + tr(Sigma_s^{-1} W_s)) / 2
plus the constant -n_s d log(2 pi) / 2, with W_s = Y_s' Y_s.  Every
inverse routes through the q x q Woodbury core of
Sigma_s = Lam_s~ Lam_s~' + Delta, Lam_s~ = Lambda chol(I + A_s A_s'),
keeping the per-study cost at O(q d^2) regardless of sample size.

Gradients of the log posterior follow the same structure via
G_s = n_s Sigma_s^{-1} - Sigma_s^{-1} W_s Sigma_s^{-1}:
    d/dLambda   = -sum_s G_s Lambda C_s            + prior term
    d/ddelta~   = -1/2 sum_s diag(G_s) * exp(delta~) + prior term
    d/dA_s      = -Lambda' G_s Lambda A_s           + prior term
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import DimensionError, NumericError
from .model import ParamSet, StudySummary
from .priors import LOG_2PI, DLState, PriorHyper, grad_log_prior, log_prior


# =========================================================================
# per-study workspace
# =========================================================================

@dataclass
class StudyWorkspace:
    """Intermediates for one study at one parameter point."""

    c: np.ndarray           # I_q + A_s A_s'
    chol_c: np.ndarray      # lower Cholesky factor of c
    lam_tilde: np.ndarray   # Lambda @ chol_c
    logdet: float           # log |Sigma_s|
    trace: float            # tr(Sigma_s^{-1} W_s)
    n: int
    sig_inv: np.ndarray | None = None
    sig_inv_w: np.ndarray | None = None
    g: np.ndarray | None = None


def compute_workspace(params: ParamSet, study: StudySummary, s: int,
                      with_grad: bool = True) -> StudyWorkspace:
    """Assemble the Woodbury pieces for study s.

    With with_grad=False only the log-determinant and trace terms are
    produced (enough for the likelihood); otherwise Sigma^{-1},
    Sigma^{-1} W and G are materialized, all in O(q d^2).
    """
    lam = params.lam
    d, q = lam.shape
    if study.d != d:
        raise DimensionError(
            f"study {s}: W has dimension {study.d}, parameters have {d}")
    a_s = params.a_list[s]
    c = np.eye(q) + a_s @ a_s.T
    c = 0.5 * (c + c.T)
    try:
        chol_c = np.linalg.cholesky(c)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"study {s}: I + A A' not factorizable") from exc
    lam_tilde = lam @ chol_c

    with np.errstate(over="raise"):
        try:
            d_inv = np.exp(-params.log_delta)
        except FloatingPointError as exc:
            raise NumericError(f"study {s}: exp(-log_delta) overflowed") from exc
    u = lam_tilde * d_inv[:, None]
    core = np.eye(q) + lam_tilde.T @ u
    core = 0.5 * (core + core.T)
    if not np.isfinite(core).all():
        raise NumericError(f"study {s}: Woodbury core is non-finite")
    try:
        cf = linalg.cho_factor(core, lower=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise NumericError(f"study {s}: Woodbury core not SPD") from exc
    logdet = (2.0 * float(np.sum(np.log(np.diag(cf[0]))))
              + float(np.sum(params.log_delta)))

    w = study.w
    ru = linalg.cho_solve(cf, u.T)              # M^{-1} Lam~' Delta^{-1}
    ruw = ru @ w                                # q x d
    siw = d_inv[:, None] * w - u @ ruw          # Sigma^{-1} W
    trace = float(np.trace(siw))

    ws = StudyWorkspace(c=c, chol_c=chol_c, lam_tilde=lam_tilde,
                        logdet=logdet, trace=trace, n=study.n)
    if not with_grad:
        return ws

    sig_inv = np.diag(d_inv) - u @ ru
    sig_inv = 0.5 * (sig_inv + sig_inv.T)
    # (Sigma^{-1} W) Sigma^{-1} through the same low-rank split
    siwsi = siw * d_inv[None, :] - (siw @ u) @ ru
    g = study.n * sig_inv - siwsi
    ws.sig_inv = sig_inv
    ws.sig_inv_w = siw
    ws.g = 0.5 * (g + g.T)
    return ws


# =========================================================================
# marginal log likelihood
# =========================================================================

def _check_studies(params: ParamSet, studies) -> None:
    if len(studies) != len(params.a_list):
        raise DimensionError(
            f"{len(studies)} studies but {len(params.a_list)} loading sets")


def marginal_loglik(params: ParamSet, studies) -> float:
    """Exact marginal log likelihood over all studies.

    Includes the full normal constant so values are comparable across
    sample sizes and usable for evidence approximations.
    """
    _check_studies(params, studies)
    total = 0.0
    for s, study in enumerate(studies):
        ws = compute_workspace(params, study, s, with_grad=False)
        total -= 0.5 * (study.n * (ws.logdet + study.d * LOG_2PI) + ws.trace)
    return total


# =========================================================================
# gradients
# =========================================================================

@dataclass
class GradientSet:
    """Gradient blocks matching the ParamSet layout."""

    d_lam: np.ndarray
    d_log_delta: np.ndarray
    d_a_list: list[np.ndarray]

    def pack(self) -> np.ndarray:
        parts = [self.d_lam.ravel(), self.d_log_delta]
        parts += [a.ravel() for a in self.d_a_list]
        return np.concatenate(parts)


def _study_terms(params: ParamSet, study: StudySummary, s: int):
    """Likelihood pieces contributed by one study."""
    ws = compute_workspace(params, study, s, with_grad=True)
    gl = ws.g @ params.lam                       # G_s Lambda
    d_lam = -gl @ ws.c
    d_delta = -0.5 * np.diag(ws.g) * np.exp(params.log_delta)
    d_a = -(params.lam.T @ gl) @ params.a_list[s]
    loglik = -0.5 * (study.n * (ws.logdet + study.d * LOG_2PI) + ws.trace)
    return loglik, d_lam, d_delta, d_a


def parallel_grad_reduce(params: ParamSet, dl: DLState, hyper: PriorHyper,
                         studies, beta: float = 1.0, workers: int = 1):
    """Log posterior and its gradient, mapped over studies.

    Study terms are computed independently (optionally on a thread
    pool) and reduced in ascending study order, so results are
    identical bit for bit regardless of worker count.

    Returns:
        (log_posterior, marginal_loglik, GradientSet)
    """
    _check_studies(params, studies)
    indices = range(len(studies))
    if workers > 1 and len(studies) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            terms = list(pool.map(
                lambda s: _study_terms(params, studies[s], s), indices))
    else:
        terms = [_study_terms(params, studies[s], s) for s in indices]

    loglik = 0.0
    d_lam = np.zeros_like(params.lam)
    d_delta = np.zeros_like(params.log_delta)
    d_a_list = [None] * len(studies)
    for s in indices:  # fixed reduction order
        ll, g_lam, g_delta, g_a = terms[s]
        loglik += ll
        d_lam += g_lam
        d_delta += g_delta
        d_a_list[s] = g_a

    p_lam, p_delta, p_a = grad_log_prior(params, dl, hyper)
    grad = GradientSet(
        d_lam=beta * d_lam + p_lam,
        d_log_delta=beta * d_delta + p_delta,
        d_a_list=[beta * d_a_list[s] + p_a[s] for s in indices],
    )
    log_post = beta * loglik + log_prior(params, dl, hyper)
    return log_post, loglik, grad


def grad_log_posterior(params: ParamSet, dl: DLState, hyper: PriorHyper,
                       studies, beta: float = 1.0):
    """Sequential form of parallel_grad_reduce (workers = 1)."""
    return parallel_grad_reduce(params, dl, hyper, studies, beta=beta,
                                workers=1)
