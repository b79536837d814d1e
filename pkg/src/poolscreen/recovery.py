"""Decoding noisy pooled readings: screening, counting, and list recovery.

The pipeline for one positive pool: COMP screening drops every column that
appears in a zero reading (zeros are exact under multiplicative noise), a
posterior over the number of positives picks a window of candidate support
sizes, and a list decoder scores every candidate support in the window by
the best explanation its loads can give the readings.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .model import LoadLaw, NoiseModel

_SQRT_PI = math.sqrt(math.pi)
_LOG_2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# instances


@dataclass(frozen=True, eq=False)
class PoolInstance:
    """One pool's decode matrix (stage-1 rows included) and its readings."""

    matrix: np.ndarray
    measurements: np.ndarray

    def __post_init__(self):
        matrix = np.ascontiguousarray(self.matrix, dtype=np.float64)
        meas = np.asarray(self.measurements, dtype=np.float64)
        if matrix.ndim != 2:
            raise ValueError("matrix must be 2-D")
        if not np.all((matrix == 0) | (matrix == 1)):
            raise ValueError("matrix must be 0/1")
        if meas.shape != (matrix.shape[0],):
            raise ValueError("one measurement per matrix row required")
        if np.any(meas < 0):
            raise ValueError("measurements must be non-negative")
        object.__setattr__(self, "matrix", matrix)
        object.__setattr__(self, "measurements", meas)

    @property
    def s(self) -> int:
        return self.matrix.shape[1]


@dataclass(frozen=True, eq=False)
class ReducedInstance:
    """What COMP leaves: surviving columns and strictly positive readings."""

    survivors: np.ndarray
    active_rows: np.ndarray
    sub_matrix: np.ndarray
    sub_measurements: np.ndarray
    m_star: int
    s_star: int

    def __post_init__(self):
        if self.sub_matrix.shape != (self.m_star, self.s_star):
            raise ValueError("sub_matrix shape disagrees with m_star/s_star")
        if self.sub_measurements.shape != (self.m_star,):
            raise ValueError("sub_measurements length disagrees with m_star")
        if np.any(self.sub_measurements <= 0):
            raise ValueError("reduced instances keep only strictly positive readings")


def comp(instance: PoolInstance) -> ReducedInstance:
    """Screen columns: anything read as zero rules out every column it pools.

    The survivors are a superset of the true support whenever readings are
    exact zeros precisely on empty pools, which multiplicative noise grants.
    """
    z = instance.measurements
    zero_rows = z == 0.0
    killed = (instance.matrix[zero_rows] > 0).any(axis=0)
    survivors = np.flatnonzero(~killed)
    active = np.flatnonzero(~zero_rows)
    sub = instance.matrix[np.ix_(active, survivors)]
    return ReducedInstance(
        survivors=survivors,
        active_rows=active,
        sub_matrix=sub,
        sub_measurements=z[active],
        m_star=active.shape[0],
        s_star=survivors.shape[0],
    )


# ---------------------------------------------------------------------------
# prevalence and pool-count estimates


def estimate_prevalence(t: int, q: int, s: int) -> float:
    """Maximum-likelihood prevalence from t positive pools out of q, size s."""
    if q < 1 or s < 1:
        raise ValueError("q and s must be positive")
    if not 0 <= t <= q:
        raise ValueError("t must lie in [0, q]")
    return 1.0 - (1.0 - t / q) ** (1.0 / s)


@lru_cache(maxsize=8)
def _gh_nodes(points: int) -> tuple[np.ndarray, np.ndarray]:
    return np.polynomial.hermite.hermgauss(points)


def sum_measurement_logpdf(
    z: float, k: int, law: LoadLaw, noise: NoiseModel, gh_points: int = 64
) -> float:
    """Log density at z > 0 of (sum of k iid loads) times the noise factor.

    For an atomic law the sum is a known constant y, so the density is
    p_eps(z/y)/y exactly.  Otherwise the noise is integrated out with
    Gauss-Hermite quadrature in log space.
    """
    if z <= 0:
        raise ValueError("z must be positive")
    if k < 1:
        raise ValueError("k must be >= 1")
    if law.is_atomic:
        y = k * law.value
        return float(noise.logpdf(z / y)) - math.log(y)
    x, w = _gh_nodes(gh_points)
    u = noise.mu_eps + math.sqrt(2.0) * noise.sigma_eps * x
    fy = law.sum_density(k, z * np.exp(-u))
    val = float(np.sum(w * fy * np.exp(-u))) / _SQRT_PI
    return math.log(val) if val > 0.0 else -math.inf


def count_log_posterior(
    z1: float, s: int, p: float, noise: NoiseModel, law: LoadLaw
) -> np.ndarray:
    """Unnormalized log posterior over k = 1..s given a positive pool reading.

    Binomial(s, p) prior restricted to k >= 1 times the reading density.
    """
    if z1 <= 0:
        raise ValueError("the pool reading must be positive")
    if s < 1:
        raise ValueError("s must be >= 1")
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    ks = np.arange(1, s + 1)
    lp = math.log(p) if p > 0 else -math.inf
    binom = np.array(
        [math.lgamma(s + 1) - math.lgamma(k + 1) - math.lgamma(s - k + 1) for k in ks]
    )
    if p < 1.0:
        tail = (s - ks) * math.log1p(-p)
    else:
        tail = np.where(ks == s, 0.0, -np.inf)
    log_prior = binom + ks * lp + tail
    log_like = np.array([sum_measurement_logpdf(z1, int(k), law, noise) for k in ks])
    return log_prior + log_like


def estimate_pool_count(
    z1: float, s: int, p: float, noise: NoiseModel, law: LoadLaw
) -> int:
    """Most probable number of positives in a pool read as z1 > 0.

    Ties resolve toward the smaller count.
    """
    post = count_log_posterior(z1, s, p, noise, law)
    return int(np.argmax(post)) + 1  # first maximum = smallest k


# ---------------------------------------------------------------------------
# subset scoring


@dataclass(frozen=True)
class OptimizerSettings:
    """Projected gradient ascent over the load box, with backtracking."""

    starts: int = 5  # 1 reading-proportional start + the rest uniform
    iters: int = 500
    rel_tol: float = 1e-9
    armijo: float = 1e-4
    seed: int = 0  # stream for the random starts when no generator is passed

    def __post_init__(self):
        if self.starts < 1 or self.iters < 1:
            raise ValueError("starts and iters must be positive")
        if self.rel_tol <= 0 or not 0 < self.armijo < 1:
            raise ValueError("bad tolerance settings")


@dataclass
class DecoderConfig:
    alpha: float = 0.9
    k_window: int = 1
    enumeration_cap: int = 200_000
    optimizer: OptimizerSettings = field(default_factory=OptimizerSettings)
    prevalence_mode: str = "estimate"  # or "known"
    prevalence: float | None = None
    keep_candidates: bool = False

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        if self.k_window < 0:
            raise ValueError("k_window must be non-negative")
        if self.enumeration_cap < 1:
            raise ValueError("enumeration_cap must be positive")
        if self.prevalence_mode not in ("estimate", "known"):
            raise ValueError("prevalence_mode must be 'estimate' or 'known'")
        if self.prevalence_mode == "known":
            if self.prevalence is None or not 0.0 < self.prevalence <= 1.0:
                raise ValueError("known prevalence_mode needs prevalence in (0, 1]")


@dataclass(frozen=True)
class CandidateScore:
    """One candidate support with its joint score (kept in log form too).

    Inside a DecodeResult the subset holds column indices of the decoded
    instance; score_subset echoes the survivor-local indices it was given.
    converged reports whether the load search met its tolerance within the
    iteration budget; the score is the best found either way.
    """

    subset: tuple[int, ...]
    log_score: float
    score: float
    argmax_loads: np.ndarray | None = None
    converged: bool = True


@dataclass(frozen=True)
class DecodeResult:
    estimate: tuple[int, ...]  # column indices of the pool instance
    best: CandidateScore | None
    scored_count: int
    budget_exceeded: bool
    candidates: list[CandidateScore] | None = None


class BudgetExceeded(RuntimeError):
    """Enumeration hit the cap; carries the best-effort partial result."""

    def __init__(self, result: DecodeResult):
        super().__init__(f"enumeration cap hit after {result.scored_count} candidate supports")
        self.result = result


def _exp_score(log_score: float) -> float:
    if log_score == -math.inf:
        return 0.0
    return math.exp(log_score) if log_score < 709.0 else math.inf


def _prior_part(k: int, s_star: int, p: float, law: LoadLaw) -> float:
    lp = math.log(p) if p > 0 else -math.inf
    lq = math.log1p(-p) if p < 1 else -math.inf
    # guard the k = 0 and k = s_star corners against 0 * inf
    val = 0.0
    if k > 0:
        val += k * (lp + law.log_density_inside)
    if s_star > k:
        val += (s_star - k) * lq
    return val


class _Scorer:
    """Shared per-instance quantities for scoring subsets of one reduction."""

    def __init__(self, reduced: ReducedInstance, p: float, noise: NoiseModel, law: LoadLaw,
                 opt: OptimizerSettings):
        self.reduced = reduced
        self.p = p
        self.noise = noise
        self.law = law
        self.opt = opt
        self.v = np.log(reduced.sub_measurements) - noise.mu_eps  # (m*,)
        self.sig2 = noise.sigma_eps**2
        # constants of the log objective: the per-row density normalizers
        self.const = float(
            -np.log(reduced.sub_measurements).sum()
            - reduced.m_star * math.log(noise.sigma_eps * math.sqrt(2.0 * math.pi))
        )
        self.lo = law.lo
        self.hi = law.hi
        self.log_lo = math.log(self.lo)
        self.log_hi = math.log(self.hi)
        self.priors = {k: _prior_part(k, reduced.s_star, p, law) for k in range(0, reduced.s_star + 1)}

    def coverage(self, subsets: np.ndarray) -> np.ndarray:
        """True where every positive reading pools at least one subset column."""
        if self.reduced.m_star == 0:
            return np.ones(subsets.shape[0], dtype=bool)
        if subsets.shape[1] == 0:
            return np.zeros(subsets.shape[0], dtype=bool)
        hit = self.reduced.sub_matrix[:, subsets] > 0  # (m*, N, k)
        return hit.any(axis=2).all(axis=0)

    def row_counts(self, subsets: np.ndarray) -> np.ndarray:
        """How many subset columns each positive reading pools: (N, m*)."""
        if subsets.shape[1] == 0:
            return np.zeros((subsets.shape[0], self.reduced.m_star))
        return self.reduced.sub_matrix[:, subsets].sum(axis=2).T

    def upper_bound(self, subsets: np.ndarray, cnt: np.ndarray) -> np.ndarray:
        """Bound on log f: each row's term maximized independently.

        The row term u - (v-u)^2/(2 sig^2) is concave in u = ln(pooled load),
        peaking at v + sig^2; u is confined to [ln(c*lo), ln(c*hi)] when the
        subset puts c columns in the row.  Summing the clamped peaks bounds
        the coupled maximum from above.
        """
        k = subsets.shape[1]
        if self.reduced.m_star == 0:
            return np.full(subsets.shape[0], self.priors[k] + self.const)
        log_cnt = np.log(np.maximum(cnt, 1.0))
        u = np.clip(self.v + self.sig2, log_cnt + self.log_lo, log_cnt + self.log_hi)
        term = u - (self.v - u) ** 2 / (2.0 * self.sig2)
        return term.sum(axis=1) + self.priors[k] + self.const

    def exact(self, subsets: np.ndarray, rng: np.random.Generator):
        """Optimized log f, maximizing loads, and convergence per subset."""
        N, k = subsets.shape
        prior = self.priors[k]
        ones = np.ones(N, dtype=bool)
        if k == 0:
            # only legal when nothing needs covering; the empty explanation
            return np.full(N, prior + self.const), np.zeros((N, 0)), ones
        if self.reduced.m_star == 0:
            mid = np.full((N, k), 0.5 * (self.lo + self.hi))
            return np.full(N, prior + self.const), mid, ones
        A = self.reduced.sub_matrix[:, subsets].transpose(1, 0, 2)  # (N, m*, k)
        if self.law.is_atomic:
            # the box is a point: evaluate, nothing to optimize
            y = A.sum(axis=2) * self.law.value
            u = np.log(y)
            phi = (u - (self.v - u) ** 2 / (2.0 * self.sig2)).sum(axis=1)
            return phi + prior + self.const, np.full((N, k), self.law.value), ones
        phi, loads, conv = _optimize_loads(A, self.v, self.sig2, self.lo, self.hi, self.opt, rng)
        return phi + prior + self.const, loads, conv


def _optimize_loads(A, v, sig2, lo, hi, opt: OptimizerSettings, rng: np.random.Generator):
    """Multi-start projected gradient ascent of the load log-objective.

    A: (N, m, k) pooling patterns, v: (m,) debiased log readings.  Returns
    the best objective value and maximizer per instance.
    """
    N, m, k = A.shape
    S = opt.starts
    # heuristic start: split each reading evenly over the columns it pools,
    # then average the per-column shares over the rows that see the column
    cnt = A.sum(axis=2)  # (N, m)
    shares = np.exp(v)[None, :] / np.maximum(cnt, 1.0)
    colw = A.sum(axis=1)  # (N, k)
    x0 = np.einsum("nmk,nm->nk", A, shares) / np.maximum(colw, 1.0)
    x0[colw == 0] = 0.5 * (lo + hi)
    np.clip(x0, lo, hi, out=x0)
    X = np.empty((N, S, k))
    X[:, 0, :] = x0
    if S > 1:
        X[:, 1:, :] = rng.uniform(lo, hi, size=(N, S - 1, k))

    AF = np.repeat(A, S, axis=0)  # (N*S, m, k)
    XF = np.ascontiguousarray(X.reshape(N * S, k))
    P = N * S

    def phi_parts(Af, Xf):
        y = np.matmul(Af, Xf[:, :, None])[:, :, 0]
        u = np.log(y)
        r = v[None, :] - u
        return (u - r * r / (2.0 * sig2)).sum(axis=1), u, y

    G, U, Y = phi_parts(AF, XF)
    tau = np.full(P, hi - lo)
    settled = np.zeros(P, dtype=bool)
    alive = np.arange(P)
    for _ in range(opt.iters):
        if alive.size == 0:
            break
        Ai = AF[alive]
        Xi = XF[alive]
        Gi = G[alive]
        Wi = (1.0 + (v[None, :] - U[alive]) / sig2) / Y[alive]
        g = np.matmul(Ai.transpose(0, 2, 1), Wi[:, :, None])[:, :, 0]
        ti = tau[alive]
        ok = np.zeros(alive.size, dtype=bool)
        Xc, Gc, Uc, Yc = Xi.copy(), Gi.copy(), U[alive].copy(), Y[alive].copy()
        pend = np.arange(alive.size)
        for _ in range(60):
            trial = np.clip(Xi[pend] + ti[pend, None] * g[pend], lo, hi)
            Gt, Ut, Yt = phi_parts(Ai[pend], trial)
            rhs = Gi[pend] + opt.armijo * ((trial - Xi[pend]) * g[pend]).sum(axis=1)
            good = Gt >= rhs
            hit = pend[good]
            Xc[hit] = trial[good]
            Gc[hit] = Gt[good]
            Uc[hit] = Ut[good]
            Yc[hit] = Yt[good]
            ok[hit] = True
            pend = pend[~good]
            if pend.size == 0:
                break
            ti[pend] *= 0.5
        # instances that exhausted backtracking sit at a projection fixed point
        conv = ~ok | (Gc - Gi <= opt.rel_tol * (1.0 + np.abs(Gc)))
        XF[alive] = Xc
        G[alive] = Gc
        U[alive] = Uc
        Y[alive] = Yc
        tau[alive] = np.where(ok, ti * 1.3, ti)
        settled[alive[conv]] = True
        alive = alive[~conv]

    G = G.reshape(N, S)
    XF = XF.reshape(N, S, k)
    settled = settled.reshape(N, S)
    best = G.argmax(axis=1)
    rows = np.arange(N)
    return G[rows, best], XF[rows, best], settled[rows, best]


def score_subset(
    reduced: ReducedInstance,
    subset,
    p: float,
    noise: NoiseModel,
    law: LoadLaw,
    opt: OptimizerSettings | None = None,
    rng: np.random.Generator | None = None,
) -> CandidateScore:
    """Joint score of one candidate support (its size times prior terms times
    the best load explanation).  Zero when some positive reading is uncovered.
    """
    opt = opt or OptimizerSettings()
    subset = tuple(int(j) for j in subset)
    if any(not 0 <= j < reduced.s_star for j in subset) or len(set(subset)) != len(subset):
        raise ValueError("subset must hold distinct survivor-local column indices")
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    scorer = _Scorer(reduced, p, noise, law, opt)
    arr = np.array([subset], dtype=np.intp).reshape(1, len(subset))
    if not bool(scorer.coverage(arr)[0]):
        return CandidateScore(subset=subset, log_score=-math.inf, score=0.0)
    rng = rng if rng is not None else np.random.default_rng(opt.seed)
    logf, loads, conv = scorer.exact(arr, rng)
    return CandidateScore(
        subset=subset,
        log_score=float(logf[0]),
        score=_exp_score(float(logf[0])),
        argmax_loads=loads[0],
        converged=bool(conv[0]),
    )


def log_posterior_gradient(
    reduced: ReducedInstance,
    subset,
    loads: np.ndarray,
    noise: NoiseModel,
    law: LoadLaw | None = None,
) -> np.ndarray:
    """Gradient of the load log-objective at `loads` for one subset.

    Valid only where every load and every pooled quantity is strictly
    positive; when a law is supplied the loads must be strictly inside its
    box, matching the region where the objective is differentiable.
    """
    subset = np.asarray(subset, dtype=np.intp)
    loads = np.asarray(loads, dtype=np.float64)
    if loads.shape != (subset.shape[0],):
        raise ValueError("one load per subset column required")
    if np.any(loads <= 0):
        raise ValueError("loads must be strictly positive")
    if law is not None and (np.any(loads <= law.lo) or np.any(loads >= law.hi)):
        raise ValueError("loads must lie strictly inside the load box")
    A = reduced.sub_matrix[:, subset]
    y = A @ loads
    if np.any(y <= 0):
        raise ValueError("every positive reading must pool at least one subset column")
    v = np.log(reduced.sub_measurements) - noise.mu_eps
    u = np.log(y)
    return A.T @ ((1.0 + (v - u) / noise.sigma_eps**2) / y)


# ---------------------------------------------------------------------------
# list decoding

_CHUNK = 4096


def _combo_chunks(pool: np.ndarray, k: int, chunk: int = _CHUNK):
    """Yield (chunk, k) arrays of combinations of `pool` in lexicographic order."""
    it = itertools.combinations(pool.tolist(), k)
    while True:
        block = list(itertools.islice(it, chunk))
        if not block:
            return
        yield np.array(block, dtype=np.intp).reshape(len(block), k)


class _ListAccumulator:
    """Running best score, kept chunks, and the cap accounting."""

    def __init__(self, scorer: _Scorer, cap: int, log_alpha: float, rng: np.random.Generator):
        self.scorer = scorer
        self.cap = cap
        self.log_alpha = log_alpha
        self.rng = rng
        self.scored = 0
        self.best_logf = -math.inf
        self.best_subset: tuple[int, ...] | None = None
        self.best_loads: np.ndarray | None = None
        self.best_converged = True
        self.kept: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []
        self.exceeded = False

    def feed(self, subsets: np.ndarray) -> None:
        """Score one chunk (already coverage-filtered); honors the cap."""
        room = self.cap - self.scored
        if room <= 0:
            self.exceeded = True
            return
        if subsets.shape[0] > room:
            subsets = subsets[:room]
            self.exceeded = True
        self.scored += subsets.shape[0]
        cnt = self.scorer.row_counts(subsets)
        bound = self.scorer.upper_bound(subsets, cnt)
        # a subset whose bound misses the list threshold can neither enter
        # the final list nor become the maximizer: skip its load search
        keep = bound >= self.log_alpha + self.best_logf
        if not np.any(keep):
            return
        subsets = subsets[keep]
        logf, loads, conv = self.scorer.exact(subsets, self.rng)
        top = int(np.argmax(logf))
        if logf[top] > self.best_logf:
            self.best_logf = float(logf[top])
            self.best_subset = tuple(int(j) for j in subsets[top])
            self.best_loads = loads[top].copy()
            self.best_converged = bool(conv[top])
        sel = logf >= self.log_alpha + self.best_logf
        if np.any(sel):
            self.kept.append((subsets[sel], logf[sel], conv[sel]))

    def result(self, reduced: ReducedInstance, keep_candidates: bool) -> DecodeResult:
        if self.best_subset is None or self.best_logf == -math.inf:
            # nothing admissible explains the readings
            return DecodeResult(
                estimate=(),
                best=None,
                scored_count=self.scored,
                budget_exceeded=self.exceeded,
                candidates=[] if keep_candidates else None,
            )
        threshold = self.log_alpha + self.best_logf
        members: list[tuple[tuple[int, ...], float, bool]] = []
        union: set[int] = set()
        cols = reduced.survivors
        for subs, logf, conv in self.kept:
            sel = logf >= threshold
            for row, lf, cv in zip(subs[sel], logf[sel], conv[sel]):
                local = tuple(int(cols[j]) for j in row)
                members.append((local, float(lf), bool(cv)))
                union.update(local)
        estimate = tuple(sorted(union))
        best = CandidateScore(
            subset=tuple(int(cols[j]) for j in self.best_subset),
            log_score=self.best_logf,
            score=_exp_score(self.best_logf),
            argmax_loads=self.best_loads,
            converged=self.best_converged,
        )
        candidates = None
        if keep_candidates:
            members.sort(key=lambda item: (-item[1], item[0]))
            candidates = [
                CandidateScore(subset=sub, log_score=lf, score=_exp_score(lf), converged=cv)
                for sub, lf, cv in members
            ]
        return DecodeResult(
            estimate=estimate,
            best=best,
            scored_count=self.scored,
            budget_exceeded=self.exceeded,
            candidates=candidates,
        )


def map_list_decode(
    reduced: ReducedInstance,
    k_hat: int,
    cfg: DecoderConfig,
    p: float,
    noise: NoiseModel,
    law: LoadLaw,
    rng: np.random.Generator | None = None,
) -> DecodeResult:
    """Score candidate supports of size k_hat and its neighbors; return the
    union of every candidate scoring within a factor alpha of the best.

    Raises BudgetExceeded (carrying the partial result) past the cap.
    """
    if reduced.m_star < 1:
        raise ValueError("decoding needs at least one positive reading")
    if not 1 <= k_hat <= reduced.s_star:
        raise ValueError(f"k_hat must lie in [1, {reduced.s_star}], got {k_hat}")
    rng = rng if rng is not None else np.random.default_rng(cfg.optimizer.seed)
    scorer = _Scorer(reduced, p, noise, law, cfg.optimizer)
    acc = _ListAccumulator(scorer, cfg.enumeration_cap, math.log(cfg.alpha), rng)
    lo_k = max(k_hat - cfg.k_window, 1)
    hi_k = min(k_hat + cfg.k_window, reduced.s_star)
    pool = np.arange(reduced.s_star, dtype=np.intp)
    for k in range(lo_k, hi_k + 1):
        for chunk in _combo_chunks(pool, k):
            covered = scorer.coverage(chunk)
            acc.feed(chunk[covered])
            if acc.exceeded:
                break
        if acc.exceeded:
            break
    result = acc.result(reduced, cfg.keep_candidates)
    if result.budget_exceeded:
        raise BudgetExceeded(result)
    return result


def map_list_decode_mixed(
    reduced: ReducedInstance,
    k_hat_a: int,
    k_hat_b: int,
    cfg: DecoderConfig,
    p: float,
    noise: NoiseModel,
    law: LoadLaw,
    half_width: int,
    rng: np.random.Generator | None = None,
) -> DecodeResult:
    """List decoding over a two-pool combined instance.

    Candidate supports are built per half (columns below half_width belong
    to the first pool): each half contributes a size window around its own
    count estimate, and a half with no surviving columns contributes
    exactly nothing.
    """
    if reduced.m_star < 1:
        raise ValueError("decoding needs at least one positive reading")
    rng = rng if rng is not None else np.random.default_rng(cfg.optimizer.seed)
    left_pos = np.flatnonzero(reduced.survivors < half_width).astype(np.intp)
    right_pos = np.flatnonzero(reduced.survivors >= half_width).astype(np.intp)
    windows = []
    for k_hat, pos in ((k_hat_a, left_pos), (k_hat_b, right_pos)):
        if pos.shape[0] == 0:
            windows.append([0])
            continue
        if not 1 <= k_hat <= pos.shape[0]:
            raise ValueError(f"a half k_hat must lie in [1, {pos.shape[0]}], got {k_hat}")
        lo_k = max(k_hat - cfg.k_window, 1)
        hi_k = min(k_hat + cfg.k_window, pos.shape[0])
        windows.append(list(range(lo_k, hi_k + 1)))
    if left_pos.shape[0] == 0 and right_pos.shape[0] == 0:
        return DecodeResult((), None, 0, False, [] if cfg.keep_candidates else None)

    scorer = _Scorer(reduced, p, noise, law, cfg.optimizer)
    acc = _ListAccumulator(scorer, cfg.enumeration_cap, math.log(cfg.alpha), rng)
    for ka in windows[0]:
        for kb in windows[1]:
            for chunk in _cross_combo_chunks(left_pos, ka, right_pos, kb):
                covered = scorer.coverage(chunk)
                acc.feed(chunk[covered])
                if acc.exceeded:
                    break
            if acc.exceeded:
                break
        if acc.exceeded:
            break
    result = acc.result(reduced, cfg.keep_candidates)
    if result.budget_exceeded:
        raise BudgetExceeded(result)
    return result


def _cross_combo_chunks(left: np.ndarray, ka: int, right: np.ndarray, kb: int,
                        chunk: int = _CHUNK):
    """Yield concatenated (ka + kb)-subsets, left block varying slowest."""
    left_combos = np.array(list(itertools.combinations(left.tolist(), ka)), dtype=np.intp)
    left_combos = left_combos.reshape(left_combos.shape[0] if ka else 1, ka)
    right_combos = np.array(list(itertools.combinations(right.tolist(), kb)), dtype=np.intp)
    right_combos = right_combos.reshape(right_combos.shape[0] if kb else 1, kb)
    nb = right_combos.shape[0]
    rows_per_block = max(1, chunk // max(nb, 1))
    for start in range(0, left_combos.shape[0], rows_per_block):
        lblock = left_combos[start : start + rows_per_block]
        la = np.repeat(lblock, nb, axis=0)
        rb = np.tile(right_combos, (lblock.shape[0], 1))
        yield np.concatenate([la, rb], axis=1)
