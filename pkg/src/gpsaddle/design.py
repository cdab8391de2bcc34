"""Active-learning design: where to evaluate the true model next.

The walker's next position is, through the surrogate means, roughly a
linear read-out of the predicted force and Jacobian,

    (x_t - x_{t-1}) / dt  ~  alpha * b + beta . J

with coefficients refit at every step from the two most recent steps.
The utility of a candidate design D scores how tightly observations at D
would pin down that read-out along plausible continuations of the
trajectory: surrogate realizations are rolled forward for a short
horizon, the read-out variance is evaluated along them under the
value-only conditioning approximation, and the summed Gaussian entropies
are negated.  SPSA climbs this utility over the stacked coordinates of
the batch.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import InputError, SurrogateUnusableError
from .gad import GadState, gad_step
from .gpr import (
    ObservationKind,
    fast_variance_batch,
    params_tuple,
    sample_field_realization,
)

__all__ = [
    "DesignBatch",
    "LinCoeffs",
    "PriorPathSet",
    "SpsaParams",
    "fit_lin_coeffs",
    "sample_prior_paths",
    "utility_u1",
    "spsa_maximize",
    "reliability_check",
    "propose_design",
]

_LOG_2PI_E = float(np.log(2.0 * np.pi * np.e))
_ENTROPY_FLOOR = 1e-12
# Relative singular-value cutoff below which the linearization system is
# treated as rank-deficient; see fit_lin_coeffs.
_RANK_RCOND = 0.05


@dataclass(frozen=True)
class DesignBatch:
    """Candidate evaluation locations, one row per point."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise InputError("design batch must be a (n, d) array with n >= 1")
        if not np.all(np.isfinite(pts)):
            raise InputError("design batch contains non-finite coordinates")
        object.__setattr__(self, "points", pts)


@dataclass(frozen=True)
class LinCoeffs:
    """Read-out coefficients; fallback marks the (1, 0) default."""

    alpha: float
    beta: np.ndarray
    fallback: bool = False

    def __post_init__(self):
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float))


@dataclass(frozen=True)
class PriorPathSet:
    """Short surrogate-sampled continuations; paths may have unequal length."""

    paths: tuple


@dataclass(frozen=True)
class SpsaParams:
    """Gain schedule a_j = a/(A+j+1)^alpha_gain, c_j = c/(j+1)^gamma."""

    a: float = 0.05
    A: float = 100.0
    alpha_gain: float = 0.602
    c: float = 1.0
    gamma: float = 0.101
    iters: int = 100
    seed: int = 0

    def __post_init__(self):
        if not (self.a > 0 and self.c > 0 and self.A >= 0 and self.iters >= 0):
            raise InputError("require a > 0, c > 0, A >= 0, iters >= 0")


def fit_lin_coeffs(x_t, x_t1, x_t2, mu_b_t1, mu_b_t2, mu_J_t1, mu_J_t2, dt):
    """Least-squares (alpha, beta) from the two most recent steps.

    Each step contributes d equations
        (x_new - x_old)_i / dt = alpha * mu_b_i + sum_j beta_j * mu_J[j, i]
    evaluated at the old point.  Rank is judged at a relative
    singular-value threshold of _RANK_RCOND: two consecutive steps of a
    smooth walk are often nearly collinear, which leaves (alpha, beta)
    unidentified, and a weakly determined solve amplifies surrogate-mean
    noise into large spurious coefficients that then poison the
    reliability test (observed as negative alpha with beta of order one).
    Coefficients are kept only when the two steps genuinely separate the
    regressors.  Rank-deficient, exactly degenerate, and non-finite
    systems all fall back to pure force following (1, 0), flagged on the
    result.  A well-conditioned system is solved exactly.
    """
    x_t = np.asarray(x_t, dtype=float)
    x_t1 = np.asarray(x_t1, dtype=float)
    x_t2 = np.asarray(x_t2, dtype=float)
    d = x_t.shape[0]
    rows = []
    rhs = []
    for x_new, x_old, mb, mJ in (
        (x_t, x_t1, mu_b_t1, mu_J_t1),
        (x_t1, x_t2, mu_b_t2, mu_J_t2),
    ):
        mb = np.asarray(mb, dtype=float)
        mJ = np.asarray(mJ, dtype=float)
        lhs = (x_new - x_old) / dt
        for i in range(d):
            rows.append(np.concatenate(([mb[i]], mJ[:, i])))
            rhs.append(lhs[i])
    A = np.array(rows)
    y = np.array(rhs)
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(y))):
        return LinCoeffs(1.0, np.zeros(d), fallback=True)
    sol, _, rank, _ = np.linalg.lstsq(A, y, rcond=_RANK_RCOND)
    if rank < d + 1 or not np.all(np.isfinite(sol)):
        return LinCoeffs(1.0, np.zeros(d), fallback=True)
    return LinCoeffs(float(sol[0]), sol[1:], fallback=False)


def sample_prior_paths(model, x, v, n, K, dt, seed) -> PriorPathSet:
    """Roll n surrogate realizations forward K points (K-1 steps) from x.

    Each path uses an independent field realization but the shared start
    (x, v).  A realization that turns non-finite is truncated at the last
    finite point; if every path dies on its first step the surrogate is
    declared unusable.
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    v = v / float(np.linalg.norm(v))
    master = np.random.default_rng(seed)
    subseeds = master.integers(0, 2**63, size=n)
    paths = []
    for sub in subseeds:
        handle = sample_field_realization(model, int(sub))
        state = GadState(x, v, 0)
        pts = [state.x.copy()]
        for _ in range(K - 1):
            try:
                b, J = handle(state.x)
                state = gad_step(state, b, J, dt)
            except (RuntimeError, np.linalg.LinAlgError):
                break
            pts.append(state.x.copy())
        paths.append(np.array(pts))
    if K > 1 and all(len(p) == 1 for p in paths):
        raise SurrogateUnusableError(
            "every sampled surrogate path diverged on its first step"
        )
    return PriorPathSet(tuple(paths))


def utility_u1(D, paths: PriorPathSet, coeffs: LinCoeffs, params, dt,
               kind: ObservationKind = ObservationKind.ENERGY) -> float:
    """Negated predicted entropy of the step read-out along the paths.

    For each path point z the read-out component variances are
        s_i(z) = dt^2 * (alpha^2 Var b_i + sum_j beta_j^2 Var J[j, i]
                         + 2 alpha beta_j Cov(b_i, J[j, i]))
    under value-only conditioning on D, floored at 1e-12.  Per-step
    entropies are averaged over the paths that reach that step, summed
    over the horizon, and negated, so tighter prediction scores higher.
    """
    pts = getattr(D, "points", D)
    pts = np.asarray(pts, dtype=float)
    path_list = paths.paths
    if len(path_list) == 0:
        raise InputError("utility needs at least one path")
    d = path_list[0].shape[1]
    Z = np.vstack(path_list)
    var_b, var_J, cov_bJ = fast_variance_batch(params, pts, Z, kind=kind)
    alpha = coeffs.alpha
    beta = coeffs.beta
    s = dt * dt * (
        alpha * alpha * var_b
        + np.einsum("j,mji->mi", beta * beta, var_J)
        + 2.0 * alpha * np.einsum("j,mij->mi", beta, cov_bJ)
    )
    s = np.clip(s, _ENTROPY_FLOOR, None)
    ent = 0.5 * (d * _LOG_2PI_E + np.sum(np.log(s), axis=1))
    max_len = max(len(p) for p in path_list)
    sums = np.zeros(max_len)
    counts = np.zeros(max_len)
    pos = 0
    for p in path_list:
        L = len(p)
        sums[:L] += ent[pos:pos + L]
        counts[:L] += 1.0
        pos += L
    mask = counts > 0
    return float(-np.sum(sums[mask] / counts[mask]))


def spsa_maximize(objective, D0: DesignBatch, p: SpsaParams) -> DesignBatch:
    """Simultaneous-perturbation ascent over the stacked batch coordinates.

    Two-sided Bernoulli probes estimate the gradient; the iterate with the
    best recorded objective (including D0) is returned.  Iterations whose
    probes come back non-finite are skipped without moving.
    """
    shape = D0.points.shape
    theta = D0.points.ravel().copy()
    rng = np.random.default_rng(p.seed)
    best_theta = theta.copy()
    best_val = float(objective(D0))
    for j in range(p.iters):
        a_j = p.a / (p.A + j + 1) ** p.alpha_gain
        c_j = p.c / (j + 1) ** p.gamma
        delta = rng.integers(0, 2, size=theta.size) * 2.0 - 1.0
        up = float(objective(DesignBatch((theta + c_j * delta).reshape(shape))))
        dn = float(objective(DesignBatch((theta - c_j * delta).reshape(shape))))
        if not (np.isfinite(up) and np.isfinite(dn)):
            continue
        ghat = (up - dn) / (2.0 * c_j) * delta
        theta = theta + a_j * ghat
        val = float(objective(DesignBatch(theta.reshape(shape))))
        if np.isfinite(val) and val > best_val:
            best_val = val
            best_theta = theta.copy()
    return DesignBatch(best_theta.reshape(shape))


def reliability_check(post, coeffs: LinCoeffs, sigma_sur: float) -> bool:
    """True when the surrogate must be updated before the next step.

    The criterion combines the posterior variances at the current point
    through the read-out coefficients,
        r_i = alpha * Var b_i + sum_j beta_j * Var J[j, i],
    and triggers when max_i |r_i| reaches sigma_sur.
    """
    r = coeffs.alpha * post.var_b + post.var_J.T @ coeffs.beta
    return bool(np.max(np.abs(r)) >= sigma_sur)


def propose_design(model, x, v, coeffs: LinCoeffs, al_cfg, seed,
                   paths_seed=None) -> DesignBatch:
    """Pick an evaluation batch near x by maximizing the path utility.

    The initial batch is a Gaussian cloud around x scaled by the kernel
    length scale; paths_seed (derived from seed when omitted) controls the
    lookahead realizations independently of the SPSA perturbations.
    """
    x = np.asarray(x, dtype=float)
    d = x.shape[0]
    dt = al_cfg.design_dt
    if dt is None:
        raise InputError("al_cfg.design_dt must be resolved before proposing")
    rng = np.random.default_rng(seed)
    derived = rng.integers(0, 2**63, size=2)
    if paths_seed is None:
        paths_seed = int(derived[0])
    spsa_seed = int(derived[1])
    K = max(int(round(al_cfg.horizon_T / dt)), 1)
    paths = sample_prior_paths(model, x, v, al_cfg.n_paths, K, dt, paths_seed)
    # The least-resolved component dictates how tightly the cloud must hug x.
    length = min(q.length for q in params_tuple(model.params))
    D0 = DesignBatch(
        x[None, :] + 0.5 * np.sqrt(length) * rng.standard_normal((al_cfg.n_design, d))
    )
    kind = model.data.kind

    def objective(batch):
        return utility_u1(batch, paths, coeffs, model.params, dt, kind=kind)

    spsa = replace(al_cfg.spsa, seed=spsa_seed)
    return spsa_maximize(objective, D0, spsa)
