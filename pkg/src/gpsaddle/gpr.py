"""GP surrogate over the energy or force field.

Two observation kinds are supported.  ENERGY observes scalars u(x) and
predicts the derived fields b = -grad u, J = -hess u jointly through the
derivative kernel blocks.  FORCE observes the vector field b directly and
models each component with its own independent scalar GP, each carrying
its own hyperparameters; J is then the posterior derivative of those GPs,
with no sign flip (J_ij = db_i/dx_j).  Components of a force field can
have wildly different structure (a near-linear component next to one with
a sharp feature), and a single shared length scale splits the difference
badly enough to miscalibrate the variances both rely on.  A single
KernelParams is accepted anywhere per-component parameters are and is
broadcast to every component.

All heavy linear algebra happens once per fit (Cholesky of the value-value
Gram matrix, one per force component); predictions are triangular solves.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize

from . import kernel as kn
from .errors import IllConditionedDataError, InputError
from .kernel import KernelParams

__all__ = [
    "ObservationKind",
    "Dataset",
    "GprModel",
    "DerivPosterior",
    "MleResult",
    "fit",
    "log_marginal_likelihood",
    "optimize_hyperparams",
    "params_tuple",
    "predict_derivatives",
    "predict_label",
    "sample_field_realization",
    "fast_posterior_variance",
]

_JITTER_SCHEDULE = (1e-10, 1e-8, 1e-6)
_LOG_2PI = float(np.log(2.0 * np.pi))


def params_tuple(params) -> tuple:
    """Normalize hyperparameters to a tuple, broadcasting a single set."""
    if isinstance(params, KernelParams):
        return (params,)
    return tuple(params)


def _per_component(params, d: int) -> tuple:
    tup = params_tuple(params)
    if len(tup) == 1:
        return tup * d
    if len(tup) != d:
        raise InputError(
            f"need one hyperparameter set per component ({d}), got {len(tup)}"
        )
    return tup


class ObservationKind(Enum):
    ENERGY = "energy"
    FORCE = "force"


@dataclass(frozen=True)
class Dataset:
    """Training locations with scalar (ENERGY) or d-vector (FORCE) labels.

    eval_count tracks every true-model query charged to this data,
    including any that were discarded; it can only exceed len(labels).
    """

    kind: ObservationKind
    locations: np.ndarray
    labels: np.ndarray
    eval_count: int

    def __post_init__(self):
        loc = np.atleast_2d(np.asarray(self.locations, dtype=float))
        lab = np.asarray(self.labels, dtype=float)
        if self.kind is ObservationKind.FORCE:
            lab = np.atleast_2d(lab)
            if lab.shape != loc.shape:
                raise InputError(
                    f"FORCE labels must be (n, d) = {loc.shape}, got {lab.shape}"
                )
        else:
            lab = lab.reshape(-1)
            if lab.shape[0] != loc.shape[0]:
                raise InputError(
                    f"label count {lab.shape[0]} != location count {loc.shape[0]}"
                )
        if not np.all(np.isfinite(loc)):
            raise InputError("non-finite training locations")
        if not np.all(np.isfinite(lab)):
            raise InputError("non-finite training labels")
        if self.eval_count < lab.shape[0]:
            raise InputError("eval_count cannot be below the number of labels")
        object.__setattr__(self, "locations", loc)
        object.__setattr__(self, "labels", lab)

    @property
    def n(self) -> int:
        return self.locations.shape[0]

    @property
    def dim(self) -> int:
        return self.locations.shape[1]

    def extended(self, points, labels, extra_evals=None) -> "Dataset":
        """New dataset with extra labeled points appended.

        extra_evals defaults to the number of appended points.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        lab = np.asarray(labels, dtype=float)
        if extra_evals is None:
            extra_evals = pts.shape[0]
        new_loc = np.vstack([self.locations, pts])
        if self.kind is ObservationKind.FORCE:
            new_lab = np.vstack([self.labels, np.atleast_2d(lab)])
        else:
            new_lab = np.concatenate([self.labels, lab.reshape(-1)])
        return Dataset(self.kind, new_loc, new_lab, self.eval_count + int(extra_evals))


@dataclass(frozen=True)
class GprModel:
    """Fitted surrogate: kernel params, data, cached factors and weights.

    ENERGY mode stores a single KernelParams with one factor and one
    weight vector.  FORCE mode stores one KernelParams per component and,
    matching it, one factor and one weight vector per component.

    label_offset is the constant mean subtracted from the labels before
    conditioning: a scalar for energies, one value per component for
    forces.  Either way the labels carry a systematic offset over the
    sampled region that a zero-mean prior would otherwise have to absorb
    into the amplitude; predictions of derivatives of the labeled
    quantity are unaffected by the shift.
    """

    params: KernelParams | tuple
    data: Dataset
    factor: np.ndarray | tuple
    weights: np.ndarray | tuple
    jitter: float
    label_offset: float | np.ndarray = 0.0


@dataclass(frozen=True)
class DerivPosterior:
    """Posterior marginals of (b, J) at one query point.

    cov_bJ[i, j] = Cov(b_i, J_{j,i}), the only cross-covariances the
    diagonal entropy formula and the reliability test consume.
    """

    mu_b: np.ndarray
    mu_J: np.ndarray
    var_b: np.ndarray
    var_J: np.ndarray
    cov_bJ: np.ndarray


@dataclass(frozen=True)
class MleResult:
    """Hyperparameter search outcome; fallback marks a failed search."""

    params: KernelParams
    fallback: bool
    log_marginal: float


def _nearest_pair(X: np.ndarray):
    n = X.shape[0]
    diffs = X[:, None, :] - X[None, :, :]
    dist = np.sqrt(np.sum(diffs * diffs, axis=-1))
    dist[np.diag_indices(n)] = np.inf
    i, j = np.unravel_index(np.argmin(dist), dist.shape)
    return i, j, dist[i, j]


def _factor_value_gram(X: np.ndarray, p: KernelParams):
    """Cholesky of k(X, X) + (noise + jitter) I with jitter escalation."""
    K = kn.k_uu(X, X, p)
    base = p.noise_var
    for scale in _JITTER_SCHEDULE:
        jitter = scale * p.eta
        try:
            L = cholesky(K + (base + jitter) * np.eye(len(X)), lower=True)
            return L, jitter
        except np.linalg.LinAlgError:
            continue
    i, j, dist = _nearest_pair(X)
    raise IllConditionedDataError(
        f"Gram matrix not positive definite after jitter escalation; "
        f"nearest locations are #{i}={X[i]} and #{j}={X[j]} at distance {dist:.3e}"
    )


def fit(data: Dataset, params) -> GprModel:
    """Factor the value-value Gram matrices and cache the label solves."""
    if data.n == 0:
        raise InputError("cannot fit on an empty dataset")
    if data.kind is ObservationKind.ENERGY:
        if not isinstance(params, KernelParams):
            (params,) = params_tuple(params)
        L, jitter = _factor_value_gram(data.locations, params)
        offset = float(data.labels.mean())
        weights = cho_solve((L, True), data.labels - offset)
        return GprModel(params, data, L, weights, jitter, offset)
    ps = _per_component(params, data.dim)
    offset = data.labels.mean(axis=0)
    factors, weights, jitter = [], [], 0.0
    gram_cache = {}
    for c, p in enumerate(ps):
        key = (p.log_eta, p.log_length, p.log_noise)
        if key not in gram_cache:
            gram_cache[key] = _factor_value_gram(data.locations, p)
        L, jit = gram_cache[key]
        factors.append(L)
        weights.append(cho_solve((L, True), data.labels[:, c] - offset[c]))
        jitter = max(jitter, jit)
    return GprModel(ps, data, tuple(factors), tuple(weights), jitter, offset)


def _scalar_lml(X: np.ndarray, y: np.ndarray, p: KernelParams) -> float:
    L, _ = _factor_value_gram(X, p)
    yc = y - y.mean()
    alpha = cho_solve((L, True), yc)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    return float(-0.5 * yc @ alpha - 0.5 * logdet - 0.5 * len(yc) * _LOG_2PI)


def log_marginal_likelihood(data: Dataset, params) -> float:
    """Marginal log-likelihood of the labels.

    Labels are centered by their average first (per component for FORCE),
    matching the constant-mean model used by fit.  FORCE components are
    independent, so their log-likelihoods add; with a shared parameter set
    this reduces to the pooled likelihood.
    """
    if data.kind is ObservationKind.ENERGY:
        if not isinstance(params, KernelParams):
            (params,) = params_tuple(params)
        return _scalar_lml(data.locations, data.labels, params)
    ps = _per_component(params, data.dim)
    return sum(
        _scalar_lml(data.locations, data.labels[:, c], p) for c, p in enumerate(ps)
    )


_LOG_BOUNDS = {
    "eta": (-10.0, 12.0),
    "length": (-6.0, 6.0),
    "noise": (-12.0, 4.0),
}
# Length-scale cap factor relative to the squared median nearest-neighbor
# spacing; see optimize_hyperparams.
_LENGTH_CAP_FACTOR = 60.0


def _median_nn_spacing(X: np.ndarray) -> float:
    diff = X[:, None, :] - X[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    np.fill_diagonal(dist, np.inf)
    return float(np.median(dist.min(axis=1)))


def _length_cap(X: np.ndarray, init_length: float, noise_free: bool) -> float:
    """Largest length scale the data can witness.

    Noise-free smooth data is the dangerous case: the likelihood keeps
    rising along a degenerate eta/l ridge toward the polynomial limit,
    where the posterior claims near-zero variance arbitrarily far from
    the observations, so there the cap follows the sampling density (the
    median nearest-neighbor spacing).  With observation noise the
    likelihood is regularized and the density statistic is misleading
    anyway (design batches are clustered, so the median spacing stops
    tracking the covered region); the cap is then the span of the point
    cloud, which grows as the search advances.  Neither cap ever binds
    below init_length: refits warm-start from a previously accepted fit,
    and newly added clustered points cannot make an already-resolved
    length unidentifiable.
    """
    span = float(np.linalg.norm(X.max(axis=0) - X.min(axis=0)))
    if noise_free:
        nn = _median_nn_spacing(X)
        cap = float(np.clip(_LENGTH_CAP_FACTOR * nn * nn, 0.25, max(span * span, 0.25)))
    else:
        cap = max(span * span, 0.25)
    if np.isfinite(init_length) and init_length > cap:
        cap = float(init_length)
    return cap


def _search_hyperparams(lml_fn, init: KernelParams, init_lml: float, budget: int,
                        rng, length_cap: float, fix_noise: bool = False):
    """Multi-start Nelder-Mead ascent of one scalar marginal likelihood.

    Returns (best params, best lml, any search finished).  The best
    candidate is never worse than init; the noise variance stays at
    init's value when fix_noise is set, and always for noise-free data.
    """
    hold_noise = fix_noise or init.noise_var == 0.0
    length_bounds = (
        _LOG_BOUNDS["length"][0],
        min(_LOG_BOUNDS["length"][1], float(np.log(length_cap))),
    )
    if hold_noise:
        theta0 = np.array([init.log_eta, init.log_length])
        bounds = [_LOG_BOUNDS["eta"], length_bounds]
    else:
        theta0 = np.array([init.log_eta, init.log_length, init.log_noise])
        bounds = [_LOG_BOUNDS["eta"], length_bounds, _LOG_BOUNDS["noise"]]
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    theta0 = np.clip(theta0, lo, hi)

    def unpack(theta) -> KernelParams:
        if hold_noise:
            return KernelParams(theta[0], theta[1], init.log_noise)
        return KernelParams(theta[0], theta[1], theta[2])

    def objective(theta) -> float:
        try:
            val = lml_fn(unpack(theta))
        except (IllConditionedDataError, np.linalg.LinAlgError, FloatingPointError):
            return 1e12
        return -val if np.isfinite(val) else 1e12

    starts = [theta0]
    n_extra = 3 if budget >= 100 else 1
    for _ in range(n_extra):
        starts.append(np.clip(theta0 + rng.uniform(-1.5, 1.5, theta0.shape), lo, hi))

    best_params, best_lml = init, init_lml
    any_success = False
    for start in starts:
        res = minimize(
            objective,
            start,
            method="Nelder-Mead",
            bounds=bounds,
            options={"maxiter": int(budget), "xatol": 1e-3, "fatol": 1e-6},
        )
        cand = unpack(res.x)
        try:
            lml = lml_fn(cand)
        except (IllConditionedDataError, np.linalg.LinAlgError):
            continue
        if np.isfinite(lml):
            any_success = True
            if lml > best_lml:
                best_params, best_lml = cand, lml
    return best_params, best_lml, any_success


def optimize_hyperparams(data: Dataset, init, budget: int, seed: int = 0,
                         fix_noise: bool = False) -> MleResult:
    """Maximize the marginal likelihood over (log eta, log l[, log noise]).

    Derivative-free Nelder-Mead with randomized restarts around the warm
    start: three extras for budgets of 100 iterations or more, one for
    smaller budgets.  ENERGY data gets one search; FORCE data gets an
    independent search per component, each ascending its own scalar
    marginal likelihood, so a smooth component and a sharply varying one
    settle on their own length scales.  The result then carries one
    parameter set per component (a plain KernelParams for ENERGY), with
    log_marginal the total over components.  A search that produces no
    finite candidate keeps its warm start and sets the fallback flag; the
    accepted candidates are never worse than init.

    The noise variance is held at init's value for noise-free data and
    when fix_noise is set (a caller that knows the observation noise
    level declares it through init rather than estimating it).  The
    length scale is additionally capped by what the data can witness;
    see _length_cap for the policy.
    """
    if data.n < 3:
        raise InputError("hyperparameter search needs at least 3 observations")
    if budget <= 0:
        return MleResult(init, False, log_marginal_likelihood(data, init))
    rng = np.random.default_rng(seed)
    X = data.locations
    if data.kind is ObservationKind.ENERGY:
        if not isinstance(init, KernelParams):
            (init,) = params_tuple(init)
        init_lml = log_marginal_likelihood(data, init)
        cap = _length_cap(X, init.length, init.noise_var == 0.0)
        best, lml, ok = _search_hyperparams(
            lambda p: log_marginal_likelihood(data, p), init, init_lml,
            budget, rng, cap, fix_noise,
        )
        return MleResult(best, not ok, lml)
    ps = _per_component(init, data.dim)
    out, total, any_failed = [], 0.0, False
    for c, p0 in enumerate(ps):
        y = data.labels[:, c]
        init_lml = _scalar_lml(X, y, p0)
        cap = _length_cap(X, p0.length, p0.noise_var == 0.0)
        best, lml, ok = _search_hyperparams(
            lambda q: _scalar_lml(X, y, q), p0, init_lml, budget, rng, cap, fix_noise
        )
        out.append(best)
        total += lml
        any_failed |= not ok
    return MleResult(tuple(out), any_failed, total)


def _check_query(model: GprModel, x) -> np.ndarray:
    xq = np.asarray(x, dtype=float).reshape(-1)
    if xq.shape[0] != model.data.dim:
        raise InputError(
            f"query dimension {xq.shape[0]} != training dimension {model.data.dim}"
        )
    if not np.all(np.isfinite(xq)):
        raise InputError("non-finite query point")
    return xq


def predict_derivatives(model: GprModel, x) -> DerivPosterior:
    """Posterior marginals of (b, J) at x under the fitted surrogate."""
    xq = _check_query(model, x)
    if model.data.kind is ObservationKind.ENERGY:
        return _predict_energy(model, xq)
    return _predict_force(model, xq)


def _predict_energy(model: GprModel, xq: np.ndarray) -> DerivPosterior:
    p, X = model.params, model.data.locations
    n, d = X.shape
    Z = xq[None, :]
    ub = kn.k_ub(X, Z, p)[:, 0, :]
    uJ = kn.k_uJ(X, Z, p)[:, 0].reshape(n, d * d)
    C = np.hstack([ub, uJ])

    mu = C.T @ model.weights
    mu_b = mu[:d]
    mu_J = mu[d:].reshape(d, d)
    mu_J = 0.5 * (mu_J + mu_J.T)

    V = cho_solve((model.factor, True), C)
    prior = np.concatenate([kn.prior_var_b(p, d), kn.prior_var_J(p, d).ravel()])
    var = np.maximum(prior - np.einsum("nq,nq->q", C, V), 0.0)
    # Cov(b_i, J_{j,i}) has zero prior (odd block at zero separation).
    CJ = uJ.reshape(n, d, d)
    cov_bJ = -np.einsum("ni,nji->ij", V[:, :d], CJ)
    return DerivPosterior(mu_b, mu_J, var[:d], var[d:].reshape(d, d), cov_bJ)


def _predict_force(model: GprModel, xq: np.ndarray) -> DerivPosterior:
    X = model.data.locations
    n, d = X.shape
    Z = xq[None, :]
    mu_b = np.empty(d)
    mu_J = np.empty((d, d))
    var_b = np.empty(d)
    var_J = np.empty((d, d))
    # Components are independent GPs, so Cov(b_i, J_{j,i}) vanishes unless
    # j = i, where it couples a value with its own derivative.
    cov_bJ = np.zeros((d, d))
    for i in range(d):
        p = model.params[i]
        L = model.factor[i]
        w = model.weights[i]
        cu = kn.k_uu(X, Z, p)[:, 0]
        cg = kn.k_fg(X, Z, p)[:, 0, :]
        mu_b[i] = cu @ w + model.label_offset[i]
        mu_J[i, :] = w @ cg  # posterior mean gradient of the b_i component GP
        Vu = cho_solve((L, True), cu)
        Vg = cho_solve((L, True), cg)
        var_b[i] = max(p.eta - float(cu @ Vu), 0.0)
        var_J[i, :] = np.maximum(p.eta / p.length - np.einsum("nj,nj->j", cg, Vg), 0.0)
        cov_bJ[i, i] = -float(cg[:, i] @ Vu)
    return DerivPosterior(mu_b, mu_J, var_b, var_J, cov_bJ)


def predict_label(model: GprModel, x):
    """Posterior mean in label space: scalar energy or d-vector force."""
    xq = _check_query(model, x)
    X = model.data.locations
    if model.data.kind is ObservationKind.ENERGY:
        cu = kn.k_uu(xq[None, :], X, model.params)[0]
        return float(cu @ model.weights) + model.label_offset
    d = model.data.dim
    out = np.empty(d)
    for i in range(d):
        cu = kn.k_uu(xq[None, :], X, model.params[i])[0]
        out[i] = cu @ model.weights[i] + model.label_offset[i]
    return out


# ---------------------------------------------------------------------------
# Sampled field realizations.

def _chol_with_jitter(S: np.ndarray, eta: float) -> np.ndarray:
    for scale in _JITTER_SCHEDULE:
        try:
            return cholesky(S + scale * eta * np.eye(len(S)), lower=True)
        except np.linalg.LinAlgError:
            continue
    raise IllConditionedDataError("conditioning block not positive definite")


class _SequentialSampler:
    """Draws blocks of linear functionals of one GP, one point at a time.

    Maintains a growing Cholesky factor of the joint covariance of the base
    observations and every emitted block, so each new draw is conditioned
    exactly on everything drawn before.
    """

    def __init__(self, L0, g0, rng, eta, cross_base, cross_emit, prior_block):
        self._L = L0
        self._g = g0
        self._rng = rng
        self._eta = eta
        self._cross_base = cross_base
        self._cross_emit = cross_emit
        self._prior_block = prior_block
        self._visited = []

    def emit(self, z: np.ndarray) -> np.ndarray:
        rows = [self._cross_base(z)]
        rows.extend(self._cross_emit(zp, z) for zp in self._visited)
        c = np.vstack(rows)
        P = self._prior_block(z)
        q = P.shape[0]

        A = solve_triangular(self._L, c, lower=True)
        mean = A.T @ self._g
        cov = P - A.T @ A
        L22 = _chol_with_jitter(cov, self._eta)
        xi = self._rng.standard_normal(q)
        draw = mean + L22 @ xi

        N = self._L.shape[0]
        grown = np.zeros((N + q, N + q))
        grown[:N, :N] = self._L
        grown[N:, :N] = A.T
        grown[N:, N:] = L22
        self._L = grown
        self._g = np.concatenate([self._g, xi])
        self._visited.append(np.array(z, dtype=float))
        return draw


class SampledField:
    """One coherent draw of (b, J) from the surrogate posterior.

    Evaluations at new points are conditioned on the training data and on
    every value this handle has already produced, so the handle behaves
    like a single fixed realization of the field; repeated queries at the
    same point return identical values.
    """

    def __init__(self, model: GprModel, seed: int):
        self._model = model
        self._d = model.data.dim
        self._cache = {}
        rng = np.random.default_rng(seed)
        X = model.data.locations
        if model.data.kind is ObservationKind.ENERGY:
            y = model.data.labels - model.label_offset
            g0 = solve_triangular(model.factor, y, lower=True)
            self._samplers = [self._energy_sampler(X, model.params, g0, rng)]
        else:
            self._offsets = np.zeros(self._d) + np.asarray(model.label_offset)
            self._samplers = []
            for c in range(self._d):
                y = model.data.labels[:, c] - self._offsets[c]
                g0 = solve_triangular(model.factor[c], y, lower=True)
                self._samplers.append(
                    self._force_sampler(X, model.params[c], model.factor[c], g0, rng)
                )

    def _energy_sampler(self, X, p, g0, rng):
        d = self._d
        iu, ju = np.triu_indices(d)
        self._iu, self._ju = iu, ju

        def cross_base(z):
            Z = z[None, :]
            ub = kn.k_ub(X, Z, p)[:, 0, :]
            uJ = kn.k_uJ(X, Z, p)[:, 0][:, iu, ju]
            return np.hstack([ub, uJ])

        def cross_emit(zp, z):
            Zp, Z = zp[None, :], z[None, :]
            bb = kn.k_bb(Zp, Z, p)[0, 0]
            bJ = kn.k_bJ(Zp, Z, p)[0, 0][:, iu, ju]
            Jb = kn.k_Jb(Zp, Z, p)[0, 0][iu, ju, :]
            JJ = kn.k_JJ(Zp, Z, p)[0, 0][iu, ju][:, iu, ju]
            return np.block([[bb, bJ], [Jb, JJ]])

        def prior_block(z):
            return cross_emit(z, z)

        return _SequentialSampler(
            self._model.factor, g0, rng, p.eta, cross_base, cross_emit, prior_block
        )

    def _force_sampler(self, X, p, L0, g0, rng):
        d = self._d
        prior = np.zeros((1 + d, 1 + d))
        prior[0, 0] = p.eta
        prior[1:, 1:] = (p.eta / p.length) * np.eye(d)

        def cross_base(z):
            Z = z[None, :]
            cu = kn.k_uu(X, Z, p)[:, :1]
            cg = kn.k_fg(X, Z, p)[:, 0, :]
            return np.hstack([cu, cg])

        def cross_emit(zp, z):
            Zp, Z = zp[None, :], z[None, :]
            ff = kn.k_uu(Zp, Z, p)[0, 0]
            fg = kn.k_fg(Zp, Z, p)[0, 0]
            gf = kn.k_gf(Zp, Z, p)[0, 0]
            gg = kn.k_gg(Zp, Z, p)[0, 0]
            out = np.empty((1 + d, 1 + d))
            out[0, 0] = ff
            out[0, 1:] = fg
            out[1:, 0] = gf
            out[1:, 1:] = gg
            return out

        def prior_block(z):
            return prior.copy()

        return _SequentialSampler(
            L0, g0, rng, p.eta, cross_base, cross_emit, prior_block
        )

    def __call__(self, z):
        zq = np.asarray(z, dtype=float).reshape(-1)
        if zq.shape[0] != self._d:
            raise InputError(f"query dimension {zq.shape[0]} != {self._d}")
        key = zq.tobytes()
        if key in self._cache:
            b, J = self._cache[key]
            return b.copy(), J.copy()
        d = self._d
        if self._model.data.kind is ObservationKind.ENERGY:
            draw = self._samplers[0].emit(zq)
            b = draw[:d]
            J = np.zeros((d, d))
            J[self._iu, self._ju] = draw[d:]
            J[self._ju, self._iu] = draw[d:]
        else:
            b = np.empty(d)
            J = np.empty((d, d))
            for i, sampler in enumerate(self._samplers):
                draw = sampler.emit(zq)
                b[i] = draw[0] + self._offsets[i]
                J[i, :] = draw[1:]
        self._cache[key] = (b, J)
        return b.copy(), J.copy()


def sample_field_realization(model: GprModel, seed: int) -> SampledField:
    """A stateful handle producing one joint field realization lazily."""
    return SampledField(model, seed)


# ---------------------------------------------------------------------------
# Fast variance conditioned on a candidate batch only.

def fast_variance_batch(params, D: np.ndarray, Z: np.ndarray,
                        kind: ObservationKind = ObservationKind.ENERGY):
    """Posterior variances of (b, J) at each row of Z, conditioning only on
    hypothetical observations at the batch D.

    Cheap by construction: cost scales with the batch size, never with the
    full training set.  Returns (var_b (M,d), var_J (M,d,d), cov_bJ (M,d,d))
    with cov_bJ[m, i, j] = Cov(b_i, J_{j,i}) at Z[m].
    """
    D = np.atleast_2d(np.asarray(D, dtype=float))
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    if D.shape[1] != Z.shape[1]:
        raise InputError(f"dimension mismatch: {D.shape[1]} vs {Z.shape[1]}")
    M, d = Z.shape
    if kind is ObservationKind.ENERGY:
        if not isinstance(params, KernelParams):
            (params,) = params_tuple(params)
        p = params
        L, _ = _factor_value_gram(D, p)
        ub = kn.k_ub(D, Z, p)
        uJ = kn.k_uJ(D, Z, p)
        C = np.concatenate([ub, uJ.reshape(len(D), M, d * d)], axis=2)
        flat = C.reshape(len(D), -1)
        V = cho_solve((L, True), flat).reshape(C.shape)
        prior = np.concatenate([kn.prior_var_b(p, d), kn.prior_var_J(p, d).ravel()])
        var = np.maximum(prior[None, :] - np.einsum("nmq,nmq->mq", C, V), 0.0)
        var_b = var[:, :d]
        var_J = var[:, d:].reshape(M, d, d)
        VJ = C[:, :, d:].reshape(len(D), M, d, d)
        cov_bJ = -np.einsum("nmi,nmji->mij", V[:, :, :d], VJ)
        return var_b, var_J, cov_bJ
    ps = _per_component(params, d)
    var_b = np.empty((M, d))
    var_J = np.empty((M, d, d))
    cov_bJ = np.zeros((M, d, d))
    cache = {}
    for i, p in enumerate(ps):
        key = (p.log_eta, p.log_length, p.log_noise)
        if key not in cache:
            L, _ = _factor_value_gram(D, p)
            cu = kn.k_uu(D, Z, p)
            cg = kn.k_fg(D, Z, p)
            Vu = cho_solve((L, True), cu)
            Vg = cho_solve((L, True), cg.reshape(len(D), -1)).reshape(cg.shape)
            cache[key] = (
                np.maximum(p.eta - np.einsum("nm,nm->m", cu, Vu), 0.0),
                np.maximum(p.eta / p.length - np.einsum("nmj,nmj->mj", cg, Vg), 0.0),
                -np.einsum("nm,nmj->mj", Vu, cg),
            )
        var_f, var_g, cov = cache[key]
        var_b[:, i] = var_f
        var_J[:, i, :] = var_g
        cov_bJ[:, i, i] = cov[:, i]
    return var_b, var_J, cov_bJ


def fast_posterior_variance(params, D, z,
                            kind: ObservationKind = ObservationKind.ENERGY):
    """Single-point fast variance: (var_b (d,), var_J (d,d), cov_bJ (d,d))."""
    pts = np.atleast_2d(np.asarray(getattr(D, "points", D), dtype=float))
    zq = np.asarray(z, dtype=float).reshape(1, -1)
    var_b, var_J, cov_bJ = fast_variance_batch(params, pts, zq, kind)
    return var_b[0], var_J[0], cov_bJ[0]
