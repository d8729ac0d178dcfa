"""Priors and their Gibbs conditionals.

The shared loading matrix carries a Dirichlet-Laplace shrinkage prior
in its normal-mixture form: each entry is N(0, psi * phi^2 * tau^2)
with psi ~ Exp(1/2), phi Dirichlet(a) across all d*q entries and
tau ~ Gamma(d*q*a, rate 1/2).  Study-specific loadings are iid
N(0, b_a) and the log idiosyncratic variances are iid normal with
moments chosen so the variances themselves have mean 1 and variance 7.

The module also provides the two exact samplers the conditionals need:
inverse Gaussian via the Michael-Schucany-Haas transformation, and a
three-regime rejection sampler for the generalized inverse Gaussian
valid for every real order p and positive a, b.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError, NumericError
from .model import ParamSet

LOG_2PI = math.log(2.0 * math.pi)

# |lambda| is floored here before entering iG/giG arguments so that
# fully shrunk entries cannot produce degenerate conditionals
ABS_FLOOR = 1e-10

# printed order convention for the tau conditional and the sign-flipped
# one matching the shrinkage literature; see gibbs_update_tau
TAU_ORDER_PRINTED = "printed"
TAU_ORDER_LITERATURE = "literature"


# =========================================================================
# containers
# =========================================================================

@dataclass(frozen=True)
class PriorHyper:
    """Fixed prior hyperparameters.

    Fields:
        a: Dirichlet-Laplace concentration, 0 < a <= 1.
        b_a: variance of study-specific loading entries.
        mu_delta: mean of the log idiosyncratic variances.
        sigma2_delta: variance of the log idiosyncratic variances.
    """

    a: float
    b_a: float
    mu_delta: float
    sigma2_delta: float

    def __post_init__(self):
        if not 0.0 < self.a <= 1.0:
            raise DomainError(f"a must lie in (0, 1], got {self.a}")
        if self.b_a <= 0.0:
            raise DomainError(f"b_a must be positive, got {self.b_a}")
        if self.sigma2_delta <= 0.0:
            raise DomainError(
                f"sigma2_delta must be positive, got {self.sigma2_delta}")
        if not math.isfinite(self.mu_delta):
            raise DomainError("mu_delta must be finite")


def default_hyperparameters() -> PriorHyper:
    """Defaults: a = 1/2, b_a = 1, and log-variance moments solving
    E(delta^2) = 1, var(delta^2) = 7, i.e. sigma^2 = log 8, mu = -log(8)/2.
    """
    s2 = math.log(8.0)
    return PriorHyper(a=0.5, b_a=1.0, mu_delta=-0.5 * s2, sigma2_delta=s2)


@dataclass
class DLState:
    """Latent state of the Dirichlet-Laplace hierarchy for one loading
    matrix: local scales psi, simplex weights phi, global scale tau."""

    psi: np.ndarray
    phi: np.ndarray
    tau: float
    a: float

    def __post_init__(self):
        self.psi = np.asarray(self.psi, dtype=float)
        self.phi = np.asarray(self.phi, dtype=float)
        self.tau = float(self.tau)
        if self.psi.shape != self.phi.shape:
            raise DomainError("psi and phi must share a shape")
        if not (self.psi > 0).all():
            raise DomainError("psi entries must be positive")
        if not (self.phi > 0).all():
            raise DomainError("phi entries must be positive")
        if abs(self.phi.sum() - 1.0) > 1e-8 * max(1, self.phi.size):
            raise DomainError("phi must sum to one")
        if not self.tau > 0:
            raise DomainError("tau must be positive")
        if not 0.0 < self.a <= 1.0:
            raise DomainError(f"a must lie in (0, 1], got {self.a}")

    def copy(self) -> "DLState":
        return DLState(self.psi.copy(), self.phi.copy(), self.tau, self.a)


# =========================================================================
# exact samplers
# =========================================================================

def sample_inverse_gaussian(mu, lam, rng: np.random.Generator):
    """Inverse Gaussian draws via the Michael-Schucany-Haas transformation.

    Args:
        mu: mean parameter(s), positive.
        lam: shape parameter(s), positive.
        rng: numpy Generator.

    Returns:
        Array of draws broadcast over mu and lam (scalar in, scalar out).
    """
    mu_arr = np.asarray(mu, dtype=float)
    lam_arr = np.asarray(lam, dtype=float)
    if np.any(mu_arr <= 0) or not np.isfinite(mu_arr).all():
        raise DomainError("inverse Gaussian mean must be positive and finite")
    if np.any(lam_arr <= 0) or not np.isfinite(lam_arr).all():
        raise DomainError("inverse Gaussian shape must be positive and finite")
    mu_b, lam_b = np.broadcast_arrays(mu_arr, lam_arr)
    shape = mu_b.shape
    y = rng.standard_normal(shape) ** 2
    w = mu_b * y
    # conjugate form of the smaller root; no cancellation, always positive
    root = np.sqrt(w * (w + 4.0 * lam_b))
    x = mu_b * (root - w) / (w + root + (w == 0.0))  # w=0 -> x=mu exactly? no:
    x = np.where(w == 0.0, mu_b, x)
    u = rng.uniform(size=shape)
    out = np.where(u <= mu_b / (mu_b + x), x, mu_b * mu_b / x)
    return out if shape else float(out)


def _gig_mode(lam, omega):
    """Mode of x^(lam-1) exp(-omega (x + 1/x) / 2), stable for lam < 1."""
    shifted = 1.0 - lam
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(
            lam >= 1.0,
            (lam - 1.0 + np.sqrt((lam - 1.0) ** 2 + omega ** 2)) / omega,
            omega / (np.sqrt(shifted ** 2 + omega ** 2) + shifted),
        )


def _gig_log_kernel(x, lam, omega):
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        out = (lam - 1.0) * np.log(x) - 0.5 * omega * (x + 1.0 / x)
    return np.where(x > 0, out, -np.inf)


def _rejection_loop(pending_draw, n, rng, max_rounds=200):
    """Run a vectorized rejection kernel until every slot is filled.

    pending_draw(idx, rng) must return (values, accept_mask) for the
    requested flat indices.
    """
    out = np.empty(n)
    pending = np.arange(n)
    for _ in range(max_rounds):
        vals, ok = pending_draw(pending, rng)
        out[pending[ok]] = vals[ok]
        pending = pending[~ok]
        if pending.size == 0:
            return out
    raise NumericError("rejection sampler failed to accept after "
                       f"{max_rounds} rounds ({pending.size} slots left)")


def _gig_two_param(lam: float, omega: np.ndarray, rng: np.random.Generator):
    """Draws from x^(lam-1) exp(-omega (x + 1/x) / 2) for lam >= 0.

    Dispatches each slot to one of three rejection schemes:
    ratio-of-uniforms around the origin, ratio-of-uniforms shifted to the
    mode (spread or heavy cases), or a three-piece envelope for densities
    concentrated near zero.  Expected rejections stay O(1) in all regimes.
    """
    omega = np.asarray(omega, dtype=float)
    n = omega.size
    flat = omega.ravel()
    out = np.empty(n)

    big = (lam > 2.0) | (flat > 3.0)
    mid = ~big & ((lam >= 1.0 - 2.25 * flat ** 2) | (flat > 0.2))
    small = ~big & ~mid

    if np.any(mid):
        out[mid] = _gig_rou(lam, flat[mid], rng)
    if np.any(big):
        out[big] = _gig_rou_shifted(lam, flat[big], rng)
    if np.any(small):
        out[small] = _gig_concentrated(lam, flat[small], rng)
    return out.reshape(omega.shape)


def _gig_rou(lam, omega, rng):
    """Plain ratio of uniforms: x = v/u with u^2 <= kernel(v/u)."""
    mode = _gig_mode(np.full_like(omega, lam), omega)
    log_peak = _gig_log_kernel(mode, lam, omega)
    # sup of x * sqrt(kernel): same stationary equation with lam + 2
    x_star = (lam + 1.0 + np.sqrt((lam + 1.0) ** 2 + omega ** 2)) / omega
    v_max = np.exp(np.log(x_star)
                   + 0.5 * (_gig_log_kernel(x_star, lam, omega) - log_peak))

    def attempt(idx, rng):
        u = rng.uniform(size=idx.size)
        v = rng.uniform(size=idx.size) * v_max[idx]
        with np.errstate(divide="ignore", invalid="ignore"):
            x = v / u
        ok = np.isfinite(x) & (x > 0)
        ok &= 2.0 * np.log(u) <= (_gig_log_kernel(x, lam, omega[idx])
                                  - log_peak[idx])
        return np.where(np.isfinite(x), x, 1.0), ok

    return _rejection_loop(attempt, omega.size, rng)


def _gig_rou_shifted(lam, omega, rng):
    """Ratio of uniforms relocated to the mode; handles spread densities."""
    mode = _gig_mode(np.full_like(omega, lam), omega)
    log_peak = _gig_log_kernel(mode, lam, omega)
    # stationary points of (x - m)^2 kernel(x) solve the depressed cubic
    #   x^3 - x^2 (2(lam+1)/omega + m) + x (2(lam-1) m/omega - 1) + m = 0
    c2 = -(2.0 * (lam + 1.0) / omega + mode)
    c1 = 2.0 * (lam - 1.0) * mode / omega - 1.0
    c0 = mode
    p = c1 - c2 ** 2 / 3.0
    qq = 2.0 * c2 ** 3 / 27.0 - c2 * c1 / 3.0 + c0
    # three real roots; trigonometric solution
    r = np.sqrt(-p / 3.0)
    arg = np.clip(3.0 * qq / (2.0 * p * r), -1.0, 1.0)
    theta = np.arccos(arg)
    shift = -c2 / 3.0
    roots = np.stack([2.0 * r * np.cos((theta - 2.0 * np.pi * k) / 3.0) + shift
                      for k in range(3)])
    roots.sort(axis=0)
    x_lo, x_hi = roots[1], roots[2]  # roots straddling the mode
    v_lo = (x_lo - mode) * np.exp(
        0.5 * (_gig_log_kernel(x_lo, lam, omega) - log_peak))
    v_hi = (x_hi - mode) * np.exp(
        0.5 * (_gig_log_kernel(x_hi, lam, omega) - log_peak))

    def attempt(idx, rng):
        u = rng.uniform(size=idx.size)
        v = v_lo[idx] + rng.uniform(size=idx.size) * (v_hi[idx] - v_lo[idx])
        with np.errstate(divide="ignore", invalid="ignore"):
            x = mode[idx] + v / u
        ok = np.isfinite(x) & (x > 0)
        ok &= 2.0 * np.log(u) <= (_gig_log_kernel(x, lam, omega[idx])
                                  - log_peak[idx])
        return np.where(np.isfinite(x) & (x > 0), x, 1.0), ok

    return _rejection_loop(attempt, omega.size, rng)


def _gig_concentrated(lam, omega, rng):
    """Three-piece envelope for lam < 1 and small omega.

    Constant cap over (0, x0], the bare power x^(lam-1) over (x0, x1],
    and an exponential tail beyond x1 = 2/omega.
    """
    mode = _gig_mode(np.full_like(omega, lam), omega)
    log_peak = _gig_log_kernel(mode, lam, omega)
    x0 = omega / (1.0 - lam)
    x1 = 2.0 / omega
    area0 = x0  # relative to the peak value
    with np.errstate(over="ignore"):
        if lam > 0:
            area1 = (x1 ** lam - x0 ** lam) / lam
        else:
            area1 = np.log(x1 / x0)
        area1 = area1 * np.exp(-log_peak)
        area2 = x1 ** (lam - 1.0) * np.exp(-0.5 * omega * x1 - log_peak) \
            * 2.0 / omega
    total = area0 + area1 + area2

    def attempt(idx, rng):
        m = idx.size
        om, lo0, lo1 = omega[idx], x0[idx], x1[idx]
        pick = rng.uniform(size=m) * total[idx]
        u = rng.uniform(size=m)
        x = np.empty(m)
        log_env = np.empty(m)  # log envelope relative to peak
        in0 = pick < area0[idx]
        in1 = ~in0 & (pick < (area0[idx] + area1[idx]))
        in2 = ~in0 & ~in1
        x[in0] = u[in0] * lo0[in0]
        log_env[in0] = 0.0
        if lam > 0:
            x[in1] = (lo0[in1] ** lam
                      + u[in1] * (lo1[in1] ** lam - lo0[in1] ** lam)) ** (1.0 / lam)
        else:
            x[in1] = lo0[in1] * (lo1[in1] / lo0[in1]) ** u[in1]
        log_env[in1] = (lam - 1.0) * np.log(x[in1]) - log_peak[idx][in1]
        x[in2] = lo1[in2] - 2.0 / om[in2] * np.log1p(-u[in2])
        log_env[in2] = ((lam - 1.0) * np.log(lo1[in2])
                        - 0.5 * om[in2] * x[in2] - log_peak[idx][in2])
        w = rng.uniform(size=m)
        ok = np.log(w) + log_env <= _gig_log_kernel(x, lam, om) - log_peak[idx]
        return x, ok

    return _rejection_loop(attempt, omega.size, rng)


def sample_gig(p, a, b, rng: np.random.Generator):
    """Generalized inverse Gaussian draws, kernel x^(p-1) e^{-(a x + b/x)/2}.

    Valid for every real order p and positive a, b.  a and b broadcast;
    p is a scalar.  Scalar inputs return a float.

    Reduction to the symmetric two-parameter family: with omega =
    sqrt(a b), X = sqrt(b/a) Z where Z has kernel z^(p-1) e^{-omega(z+1/z)/2},
    and Z(-p) is distributed as 1/Z(p).
    """
    p = float(p)
    if not math.isfinite(p):
        raise DomainError("order p must be finite")
    a_arr = np.asarray(a, dtype=float)
    b_arr = np.asarray(b, dtype=float)
    if np.any(a_arr <= 0) or not np.isfinite(a_arr).all():
        raise DomainError("parameter a must be positive and finite")
    if np.any(b_arr <= 0) or not np.isfinite(b_arr).all():
        raise DomainError("parameter b must be positive and finite")
    a_b, b_b = np.broadcast_arrays(a_arr, b_arr)
    scalar = a_b.ndim == 0
    a_b = np.atleast_1d(np.asarray(a_b, dtype=float))
    b_b = np.atleast_1d(np.asarray(b_b, dtype=float))
    omega = np.sqrt(a_b * b_b)
    z = _gig_two_param(abs(p), omega, rng)
    if p < 0:
        z = 1.0 / z
    out = z * np.sqrt(b_b / a_b)
    if not np.isfinite(out).all() or np.any(out <= 0):
        raise NumericError("generalized inverse Gaussian draw degenerated")
    return float(out[0]) if scalar else out.reshape(np.broadcast(a_arr, b_arr).shape)


# =========================================================================
# Gibbs conditionals of the shrinkage hierarchy
# =========================================================================

def gibbs_update_psi(lam: np.ndarray, dl: DLState,
                     rng: np.random.Generator) -> np.ndarray:
    """Local scales given loadings: 1/psi ~ iG(tau * phi / |lambda|, 1)."""
    abs_lam = np.maximum(np.abs(lam), ABS_FLOOR)
    mu = dl.tau * dl.phi / abs_lam
    psi_tilde = sample_inverse_gaussian(mu, 1.0, rng)
    return 1.0 / psi_tilde


def gibbs_update_phi(lam: np.ndarray, a: float,
                     rng: np.random.Generator) -> np.ndarray:
    """Simplex weights given loadings: normalized giG(a-1, 1, 2|lambda|)."""
    abs_lam = np.maximum(np.abs(lam), ABS_FLOOR)
    t = sample_gig(a - 1.0, 1.0, 2.0 * abs_lam, rng)
    return t / t.sum()


def gibbs_update_tau(lam: np.ndarray, phi: np.ndarray, a: float,
                     rng: np.random.Generator,
                     order: str = TAU_ORDER_PRINTED) -> float:
    """Global scale given loadings and weights.

    The order parameter of the giG comes in two sign conventions:
    "printed" uses dq(1-a), "literature" uses dq(a-1), the form the
    stationarity checks confirm.  Chains default to "literature"; this
    function keeps "printed" as its own default so both are reachable.
    """
    dq = lam.size
    if order == TAU_ORDER_PRINTED:
        p = dq * (1.0 - a)
    elif order == TAU_ORDER_LITERATURE:
        p = dq * (a - 1.0)
    else:
        raise ConfigError(f"unknown tau order convention {order!r}")
    abs_lam = np.maximum(np.abs(lam), ABS_FLOOR)
    chi = 2.0 * float((abs_lam / phi).sum())
    return sample_gig(p, 1.0, chi, rng)


def gibbs_sweep(lam: np.ndarray, dl: DLState, rng: np.random.Generator,
                tau_order: str = TAU_ORDER_LITERATURE) -> DLState:
    """One sweep of the shrinkage state given the loadings.

    The phi and tau conditionals are derived with psi integrated out,
    so the valid composition draws (phi, tau) first and refreshes psi
    from its full conditional afterwards; this makes the sweep an exact
    blocked draw from p(psi, phi, tau | lam).  Updating psi first
    (stale phi, tau) demonstrably shifts the stationary distribution;
    the stationarity tests pin this down.
    """
    phi = gibbs_update_phi(lam, dl.a, rng)
    tau = gibbs_update_tau(lam, phi, dl.a, rng, order=tau_order)
    interim = DLState(psi=dl.psi, phi=phi, tau=tau, a=dl.a)
    psi = gibbs_update_psi(lam, interim, rng)
    return DLState(psi=psi, phi=phi, tau=tau, a=dl.a)


def sample_dl_state(d: int, q: int, a: float,
                    rng: np.random.Generator) -> DLState:
    """Draw (psi, phi, tau) from the hierarchy itself."""
    phi = rng.dirichlet(np.full(d * q, a)).reshape(d, q)
    tau = float(rng.gamma(shape=d * q * a, scale=2.0))
    psi = rng.exponential(scale=2.0, size=(d, q))
    return DLState(psi=psi, phi=phi, tau=tau, a=a)


# =========================================================================
# joint log prior and its gradient
# =========================================================================

def log_prior(params: ParamSet, dl: DLState, hyper: PriorHyper) -> float:
    """Joint log prior density at params given the shrinkage state.

    All normalizing constants are kept exact so that values are
    comparable across models and usable for evidence work.
    """
    var_lam = dl.psi * dl.phi ** 2 * dl.tau ** 2
    with np.errstate(divide="ignore", over="ignore"):
        lp = -0.5 * float(np.sum(params.lam ** 2 / var_lam
                                 + np.log(2.0 * np.pi * var_lam)))
    for a_s in params.a_list:
        lp -= 0.5 * float(np.sum(a_s ** 2)) / hyper.b_a
        lp -= 0.5 * a_s.size * (LOG_2PI + math.log(hyper.b_a))
    resid = params.log_delta - hyper.mu_delta
    lp -= 0.5 * float(np.sum(resid ** 2)) / hyper.sigma2_delta
    lp -= 0.5 * resid.size * (LOG_2PI + math.log(hyper.sigma2_delta))
    return lp


def grad_log_prior(params: ParamSet, dl: DLState, hyper: PriorHyper):
    """Gradient of log_prior in (lam, log_delta, a_list) blocks."""
    var_lam = dl.psi * dl.phi ** 2 * dl.tau ** 2
    d_lam = -params.lam / var_lam
    d_delta = -(params.log_delta - hyper.mu_delta) / hyper.sigma2_delta
    d_a = [-a_s / hyper.b_a for a_s in params.a_list]
    return d_lam, d_delta, d_a
