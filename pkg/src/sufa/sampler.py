"""HMC-within-Gibbs sampling of loadings, noise scales and shrinkage state."""

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError, InputError, NumericError
from .likelihood import parallel_grad_reduce
from .model import ModelDims, ParamSet
from .priors import DLState, gibbs_sweep, sample_dl_state

# ---------------------------------------------------------------------------
# configuration containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HmcTuning:
    """Randomized integrator tuning: step sizes and trajectory lengths."""

    max_step_size: float = 0.01
    mean_steps: float = 5.0
    min_steps: int = 1
    max_steps: int = 10

    def __post_init__(self):
        if not (np.isfinite(self.max_step_size) and self.max_step_size > 0):
            raise ConfigError("max_step_size must be positive and finite")
        if not 1 <= self.min_steps <= self.max_steps:
            raise ConfigError("need 1 <= min_steps <= max_steps")
        if not (np.isfinite(self.mean_steps) and self.mean_steps > 0):
            raise ConfigError("mean_steps must be positive and finite")


@dataclass(frozen=True)
class ChainConfig:
    """Run-length, tempering and initialization settings for one chain."""

    n_iterations: int
    burn_in: int = 2500
    thinning: int = 5
    beta: float = 1.0
    workers: int = 1
    tau_order: str = "literature"
    init_mode: str = "data"
    tuning: HmcTuning = field(default_factory=HmcTuning)

    def __post_init__(self):
        if self.burn_in < 0 or self.n_iterations <= self.burn_in:
            raise ConfigError("need 0 <= burn_in < n_iterations")
        if self.thinning < 1:
            raise ConfigError("thinning must be at least 1")
        if not (np.isfinite(self.beta) and 0.0 < self.beta <= 1.0):
            raise ConfigError("beta must lie in (0, 1]")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if self.init_mode not in ("data", "prior"):
            raise ConfigError("init_mode must be 'data' or 'prior'")

    @property
    def n_draws(self):
        return (self.n_iterations - self.burn_in) // self.thinning


@dataclass
class McmcOutput:
    """Thinned draws with per-draw values and acceptance bookkeeping."""

    draws: list            # ParamSet per stored draw
    dl_draws: list         # DLState per stored draw
    log_posterior: np.ndarray
    loglik: np.ndarray     # untempered marginal log-likelihood
    accepted: np.ndarray   # one flag per iteration, not per stored draw
    step_sizes: np.ndarray
    n_steps: np.ndarray
    elapsed_seconds: float
    beta: float
    dims: ModelDims

    @property
    def n_draws(self):
        return len(self.draws)

    @property
    def acceptance_rate(self):
        return float(np.mean(self.accepted))


# ---------------------------------------------------------------------------
# integrator
# ---------------------------------------------------------------------------


def sample_tuning(rng, tuning=HmcTuning()):
    """Draw (step size, leapfrog count): uniform step, truncated Poisson count."""
    step = rng.uniform(0.0, tuning.max_step_size)
    for _ in range(1000):
        k = int(rng.poisson(tuning.mean_steps))
        if tuning.min_steps <= k <= tuning.max_steps:
            return step, k
    raise NumericError("truncated Poisson rejection failed to terminate")


def hamiltonian(log_post, momentum):
    """Total energy with identity mass: potential -log_post plus kinetic."""
    momentum = np.asarray(momentum, dtype=float)
    if not np.isfinite(log_post):
        raise NumericError("non-finite log-posterior in Hamiltonian")
    return -float(log_post) + 0.5 * float(momentum @ momentum)


def leapfrog(vec, momentum, grad_fn, step, n_steps):
    """Integrate Hamiltonian dynamics; returns end state and cached values.

    grad_fn(vec) must return (log_post, loglik, grad_vec) and raise
    NumericError when the evaluation leaves the finite domain.
    """
    if n_steps < 1:
        raise ConfigError("n_steps must be at least 1")
    vec = np.asarray(vec, dtype=float).copy()
    _, _, grad = grad_fn(vec)
    mom = np.asarray(momentum, dtype=float) + 0.5 * step * grad
    for i in range(n_steps):
        vec = vec + step * mom
        log_post, loglik, grad = grad_fn(vec)
        if i < n_steps - 1:
            mom = mom + step * grad
    mom = mom + 0.5 * step * grad
    return vec, mom, log_post, loglik, grad


def hmc_step(vec, current, grad_fn, tuning_draw, rng):
    """One Metropolis-adjusted trajectory from the cached state.

    current is the (log_post, loglik, grad_vec) triple at vec. Returns
    (vec', current', accepted); rejections restore the inputs exactly,
    including any numeric failure inside the trajectory.
    """
    step, n_steps = tuning_draw
    momentum = rng.standard_normal(vec.size)
    h_old = hamiltonian(current[0], momentum)
    try:
        prop, mom, log_post, loglik, grad = leapfrog(
            vec, momentum, grad_fn, step, n_steps)
        h_new = -log_post + 0.5 * float(mom @ mom)
    except NumericError:
        return vec, current, False
    if not np.isfinite(h_new):
        return vec, current, False
    u = rng.uniform()
    log_u = math.log(u) if u > 0.0 else -math.inf
    if log_u < h_old - h_new:
        return prop, (log_post, loglik, grad), True
    return vec, current, False


# ---------------------------------------------------------------------------
# chain driver
# ---------------------------------------------------------------------------


def initialize(dims, studies, hyper, rng, mode="data"):
    """Build a starting point: warm start from pooled data, or a prior draw."""
    if mode == "prior":
        dl = sample_dl_state(dims.d, dims.q, hyper.a, rng)
        scale = np.sqrt(dl.psi) * dl.phi * dl.tau
        lam = rng.normal(size=(dims.d, dims.q)) * scale
        log_delta = hyper.mu_delta + math.sqrt(hyper.sigma2_delta) \
            * rng.normal(size=dims.d)
        a_list = [math.sqrt(hyper.b_a) * rng.normal(size=(dims.q, qs))
                  for qs in dims.q_s]
        return ParamSet(lam, log_delta, a_list), dl
    if mode != "data":
        raise ConfigError("init mode must be 'data' or 'prior'")
    if len(studies) != dims.n_studies:
        raise DimensionError("study count does not match dims")
    n_pooled = sum(study.n for study in studies)
    if n_pooled < 1:
        raise InputError("warm start needs pooled samples; use mode='prior'")
    w_pooled = sum(study.w for study in studies)
    variances = np.diag(w_pooled) / n_pooled
    dead = np.flatnonzero(variances <= 0.0)
    if dead.size:
        raise InputError(f"zero-variance columns {dead.tolist()}")
    eigvals, eigvecs = np.linalg.eigh(w_pooled / n_pooled)
    order = np.argsort(eigvals)[::-1][:dims.q]
    lam = eigvecs[:, order] * np.sqrt(np.maximum(eigvals[order], 0.0))
    residual = np.maximum(variances - np.sum(lam ** 2, axis=1), 1e-4)
    log_delta = np.log(residual)
    a_list = [0.01 * rng.normal(size=(dims.q, qs)) for qs in dims.q_s]
    phi = np.full((dims.d, dims.q), 1.0 / (dims.d * dims.q))
    dl = gibbs_sweep(lam, DLState(np.ones((dims.d, dims.q)), phi, 1.0, hyper.a),
                     rng)
    return ParamSet(lam, log_delta, a_list), dl


def _make_grad_fn(dims, dl, hyper, studies, beta, workers):
    def grad_fn(vec):
        params = ParamSet.unpack(vec, dims)
        log_post, loglik, grad = parallel_grad_reduce(
            params, dl, hyper, studies, beta=beta, workers=workers)
        gvec = grad.pack()
        if not (np.isfinite(log_post) and np.isfinite(gvec).all()):
            raise NumericError("non-finite log-posterior or gradient")
        return log_post, loglik, gvec
    return grad_fn


def run_chain(studies, dims, hyper, config, rng):
    """Alternate trajectory updates with the shrinkage Gibbs sweep.

    The Gibbs sweep runs every iteration regardless of acceptance; the
    cached posterior value is refreshed afterwards because the conditional
    prior of the loadings moves with the shrinkage state.
    """
    if sum(dims.q_s) > dims.q:
        raise ConfigError("sum of study-specific ranks exceeds the shared rank")
    if len(studies) != dims.n_studies:
        raise DimensionError(
            f"got {len(studies)} studies for {dims.n_studies} slots")
    for study in studies:
        if study.w.shape[0] != dims.d:
            raise DimensionError("study dimension does not match dims.d")

    t0 = time.perf_counter()
    params, dl = initialize(dims, studies, hyper, rng, mode=config.init_mode)
    vec = params.pack()
    grad_fn = _make_grad_fn(dims, dl, hyper, studies, config.beta,
                            config.workers)
    current = grad_fn(vec)

    n = config.n_iterations
    accepted = np.zeros(n, dtype=bool)
    step_sizes = np.zeros(n)
    n_steps = np.zeros(n, dtype=np.int64)
    draws, dl_draws, log_posts, logliks = [], [], [], []

    for it in range(1, n + 1):
        tuning_draw = sample_tuning(rng, config.tuning)
        vec, current, acc = hmc_step(vec, current, grad_fn, tuning_draw, rng)
        accepted[it - 1] = acc
        step_sizes[it - 1] = tuning_draw[0]
        n_steps[it - 1] = tuning_draw[1]

        params = ParamSet.unpack(vec, dims)
        dl = gibbs_sweep(params.lam, dl, rng, tau_order=config.tau_order)
        grad_fn = _make_grad_fn(dims, dl, hyper, studies, config.beta,
                                config.workers)
        current = grad_fn(vec)

        if it > config.burn_in and (it - config.burn_in) % config.thinning == 0:
            draws.append(params.copy())
            dl_draws.append(dl.copy())
            log_posts.append(current[0])
            logliks.append(current[1])

    return McmcOutput(draws, dl_draws, np.array(log_posts), np.array(logliks),
                      accepted, step_sizes, n_steps,
                      time.perf_counter() - t0, config.beta, dims)
