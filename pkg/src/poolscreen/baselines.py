"""Generic sparse-recovery baselines run on support-reduced instances.

All three solvers consume the output of recovery.comp: a sub-matrix over
surviving columns and the strictly positive readings.  They return load
estimates; support_from_estimate turns those into index sets.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.optimize import nnls

from .model import NoiseModel
from .recovery import ReducedInstance

logger = logging.getLogger(__name__)

_VARIANCE_FLOOR = 1e-10  # keeps EM precision matrices finite


@dataclass(frozen=True)
class SblSettings:
    """Initialization and stopping rules for the Bayesian solver."""

    sigma_init: float = 1.0
    sigma_j_init: float = 1000.0
    max_iters: int = 500
    convergence_tol: float = 1e-8

    def __post_init__(self):
        if self.sigma_init <= 0 or self.sigma_j_init <= 0:
            raise ValueError("initial scales must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.convergence_tol < 0:
            raise ValueError("convergence_tol must be non-negative")


@dataclass(frozen=True)
class BaselineConfig:
    """Tuning knobs shared by the baseline solvers.

    A budget of None means "derive it from the instance": the L1 budget
    falls back to default_lasso_budget and the residual stop falls back to
    default_epsilon_residual.
    """

    lasso_budget: float | None = None
    epsilon_residual: float | None = None
    sbl: SblSettings = field(default_factory=SblSettings)
    support_threshold: float = 0.2

    def __post_init__(self):
        if self.lasso_budget is not None and self.lasso_budget < 0:
            raise ValueError("lasso_budget must be non-negative")
        if self.epsilon_residual is not None and self.epsilon_residual < 0:
            raise ValueError("epsilon_residual must be non-negative")
        if self.support_threshold < 0:
            raise ValueError("support_threshold must be non-negative")


def default_lasso_budget(reduced: ReducedInstance) -> float:
    """1.1 * (reading mass) / (lightest surviving column weight)."""
    if reduced.s_star == 0 or reduced.m_star == 0:
        return 0.0
    col_weights = reduced.sub_matrix.sum(axis=0)
    return 1.1 * float(reduced.sub_measurements.sum()) / max(float(col_weights.min()), 1.0)


def default_epsilon_residual(reduced: ReducedInstance, noise: NoiseModel) -> float:
    """First-order residual magnitude of relative noise: sigma_eps * ||z||_2."""
    return noise.sigma_eps * float(np.linalg.norm(reduced.sub_measurements))


def support_from_estimate(x: np.ndarray, threshold: float) -> tuple[int, ...]:
    if threshold < 0:
        raise ValueError("threshold must be non-negative")
    x = np.asarray(x, dtype=np.float64)
    return tuple(int(j) for j in np.flatnonzero(x > threshold))


# ---------------------------------------------------------------------------
# NN-LASSO


def _project_l1_nonneg(v: np.ndarray, radius: float) -> np.ndarray:
    """Euclidean projection onto {x >= 0, sum(x) <= radius}."""
    if radius <= 0.0:
        return np.zeros_like(v)
    w = np.maximum(v, 0.0)
    if w.sum() <= radius:
        return w
    # active budget: project onto the scaled simplex by soft thresholding;
    # >= keeps the index set non-empty when rounding collapses the margin
    u = np.sort(w)[::-1]
    css = np.cumsum(u)
    ranks = np.arange(1, u.shape[0] + 1)
    rho = np.nonzero(u * ranks >= css - radius)[0][-1]
    theta = (css[rho] - radius) / (rho + 1.0)
    return np.maximum(w - theta, 0.0)


def nn_lasso(
    reduced: ReducedInstance,
    budget: float,
    max_iters: int = 20_000,
    tol: float = 1e-8,
) -> np.ndarray:
    """Least-squares fit under x >= 0 and ||x||_1 <= budget.

    Projected gradient with a 1/L step, L the squared spectral norm of the
    sub-matrix, iterated to relative stationarity tol.
    """
    if budget < 0:
        raise ValueError("budget must be non-negative")
    A = reduced.sub_matrix
    z = reduced.sub_measurements
    x = np.zeros(reduced.s_star)
    if reduced.s_star == 0 or reduced.m_star == 0 or budget == 0.0:
        return x
    lip = float(np.linalg.norm(A, 2)) ** 2
    if lip == 0.0:
        return x  # all-zero columns: every feasible point fits equally
    step = 1.0 / lip
    for _ in range(max_iters):
        grad = A.T @ (A @ x - z)
        x_next = _project_l1_nonneg(x - step * grad, budget)
        done = np.linalg.norm(x_next - x) <= tol * max(1.0, np.linalg.norm(x))
        x = x_next
        if done:
            break
    return x


# ---------------------------------------------------------------------------
# NN-OMP


def nn_omp(
    reduced: ReducedInstance, epsilon_residual: float
) -> tuple[np.ndarray, tuple[int, ...]]:
    """Greedy column selection with a non-negative refit after every pick.

    Returns the load estimate and the selected columns in pick order.  Stops
    once the residual is small enough or m_star columns are in play.
    """
    if epsilon_residual < 0:
        raise ValueError("epsilon_residual must be non-negative")
    A = reduced.sub_matrix
    z = reduced.sub_measurements
    x = np.zeros(reduced.s_star)
    limit = min(reduced.m_star, reduced.s_star)
    selected: list[int] = []
    sol = np.zeros(0)
    r = z.copy()
    while np.linalg.norm(r) > epsilon_residual and len(selected) < limit:
        corr = A.T @ r
        corr[selected] = -np.inf  # a column enters at most once
        selected.append(int(np.argmax(corr)))
        sol, _ = nnls(A[:, selected], z)
        r = z - A[:, selected] @ sol
    if selected:
        x[selected] = sol
    return x, tuple(selected)


# ---------------------------------------------------------------------------
# SBL


def _spd_inverse(mat: np.ndarray) -> np.ndarray:
    try:
        factor = scipy.linalg.cho_factor(mat, lower=True)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        logger.warning("system matrix singular; adding diagonal jitter")
        mat = mat + 1e-12 * np.eye(mat.shape[0])
        factor = scipy.linalg.cho_factor(mat, lower=True)
    return scipy.linalg.cho_solve(factor, np.eye(mat.shape[0]))


def sbl_log_evidence(
    A: np.ndarray, z: np.ndarray, sigma_js: np.ndarray, sigma: float
) -> float:
    """Marginal log-likelihood of the readings under the Gaussian model."""
    m = A.shape[0]
    cov = sigma**2 * np.eye(m) + (A * sigma_js**2) @ A.T
    _, logdet = np.linalg.slogdet(cov)
    return -0.5 * (m * math.log(2.0 * math.pi) + logdet + float(z @ np.linalg.solve(cov, z)))


def sbl(
    reduced: ReducedInstance,
    settings: SblSettings | None = None,
    return_history: bool = False,
):
    """Expectation-maximization estimate under zero-mean Gaussian priors.

    Per iteration, with the previous scales sigma and sigma_j:
        cov_x = (sigma^-2 A^T A + diag(sigma_j^-2))^-1
        x_hat = sigma^-2 cov_x A^T z
        sigma_j <- sqrt(cov_x_jj + x_hat_j^2)
        sigma   <- sqrt((||z - A x_hat||^2 + sigma^2 sum_j gamma_j) / m)
    where gamma_j = 1 - sigma_j^-2 cov_x_jj.  Negative coordinates of the
    final x_hat clamp to zero.  With return_history=True also returns the
    log evidence evaluated at the entry of every iteration.
    """
    if settings is None:
        settings = SblSettings()
    if reduced.m_star < 1 or reduced.s_star < 1:
        raise ValueError("need at least one active row and one survivor")
    A = reduced.sub_matrix
    z = reduced.sub_measurements
    m = reduced.m_star
    gram = A.T @ A
    corr = A.T @ z
    sigma = settings.sigma_init
    sigma_js = np.full(reduced.s_star, settings.sigma_j_init)
    x_prev = np.zeros(reduced.s_star)
    history: list[float] = []
    for _ in range(settings.max_iters):
        if return_history:
            history.append(sbl_log_evidence(A, z, sigma_js, sigma))
        cov_x = _spd_inverse(gram / sigma**2 + np.diag(sigma_js**-2.0))
        x_hat = cov_x @ corr / sigma**2
        diag = cov_x.diagonal()
        gammas = 1.0 - diag / sigma_js**2
        resid = z - A @ x_hat
        sigma = max(
            math.sqrt((float(resid @ resid) + sigma**2 * float(gammas.sum())) / m),
            _VARIANCE_FLOOR,
        )
        sigma_js = np.maximum(np.sqrt(diag + x_hat**2), _VARIANCE_FLOOR)
        shift = float(np.linalg.norm(x_hat - x_prev))
        x_prev = x_hat
        if shift < settings.convergence_tol:
            break
    estimate = np.maximum(x_prev, 0.0)
    if return_history:
        return estimate, history
    return estimate
