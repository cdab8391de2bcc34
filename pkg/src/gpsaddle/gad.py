"""Gentlest ascent dynamics and the surrogate-accelerated search loop.

The dynamics couples a position x with a direction v:

    x' = x + dt * (b - 2 <b, v> v / <v, v>)
    v' = normalize(v + dt * (J v - <v, J v> v))

Stable fixed points of this flow are index-1 saddles of the underlying
field; v relaxes onto the softest eigendirection.  The same stepper is
driven either by exact derivatives (reference runs) or by the GP
surrogate's posterior means, with active-learning updates whenever the
surrogate becomes unreliable along the way.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import DivergenceError, InputError
from .gpr import Dataset, KernelParams, fit, optimize_hyperparams, predict_derivatives
from .seeding import next_seed, seed_streams

__all__ = [
    "GadState",
    "GadConfig",
    "GadResult",
    "ActiveLearningConfig",
    "gad_step",
    "check_convergence",
    "run_reference_gad",
    "run_agpr_gad",
]


@dataclass(frozen=True)
class GadState:
    """Position, direction, and step counter of one walker."""

    x: np.ndarray
    v: np.ndarray
    step: int = 0

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float))


@dataclass(frozen=True)
class GadConfig:
    """Stepper settings.

    init_offset nudges the start along +v0 before the first step; a walker
    started exactly on a critical point has b = 0 and cannot leave it, so
    reference runs from a known minimum need a small push toward the
    saddle of interest.
    """

    dt: float
    tol: float
    t_max: int
    init_offset: float = 0.0

    def __post_init__(self):
        if not (self.dt > 0 and self.tol > 0 and self.t_max >= 1):
            raise InputError("require dt > 0, tol > 0, t_max >= 1")


@dataclass(frozen=True)
class GadResult:
    """Outcome of a run; cost counts true-model evaluations only."""

    x_sp: np.ndarray
    trajectory: tuple
    converged: bool
    cost: int
    updates: int
    design_log: tuple = ()


@dataclass(frozen=True)
class ActiveLearningConfig:
    """Settings of the surrogate update loop.

    design_dt = None means "use the stepper dt" for the lookahead paths;
    spsa = None picks the default gains.  init_spread is the per-axis
    variance of the Gaussian cloud of initial training locations.
    fit_noise = False pins the surrogate's noise variance at noise_var
    instead of estimating it; when the observation noise level is part of
    the experimental protocol this removes one jittery dimension from
    every refit.  mle_window caps how many observations feed the
    hyperparameter search (predictions always condition on everything):
    the search costs O(n^3) per likelihood evaluation, and a few hundred
    points pin two or three scales just as well as a few thousand.  Past
    the cap the search sees a uniform thinning of the whole history, not
    a trailing slice; recent-only data degenerates into a narrow tube
    along the walker's path, on which the length scale is unidentifiable
    and runs off to the fitting bound.
    """

    n_init: int = 20
    n_design: int = 10
    sigma_sur: float = 0.2
    n_paths: int = 20
    horizon_T: float = 0.1
    design_dt: Optional[float] = None
    init_spread: float = 0.5
    noise_var: float = 0.0
    fit_noise: bool = True
    init_params: Optional[KernelParams] = None
    mle_budget: int = 150
    mle_budget_update: int = 60
    mle_window: int = 250
    spsa: object = None


def gad_step(state: GadState, b_val, J_val, dt: float) -> GadState:
    """One Euler step of the dynamics; renormalizes v afterwards."""
    b = np.asarray(b_val, dtype=float)
    J = np.asarray(J_val, dtype=float)
    v = state.v
    vv = float(v @ v)
    x_new = state.x + dt * (b - 2.0 * float(b @ v) / vv * v)
    Jv = J @ v
    v_raw = v + dt * (Jv - float(v @ Jv) * v)
    norm = float(np.linalg.norm(v_raw))
    if not (np.all(np.isfinite(x_new)) and np.all(np.isfinite(v_raw)) and norm > 0):
        raise DivergenceError(
            f"non-finite update at step {state.step + 1} (x = {state.x})"
        )
    return GadState(x_new, v_raw / norm, state.step + 1)


def check_convergence(prev: GadState, curr: GadState, tol: float) -> bool:
    """True iff ||dx|| + ||dv|| < tol (strict)."""
    dx = float(np.linalg.norm(curr.x - prev.x))
    dv = float(np.linalg.norm(curr.v - prev.v))
    return dx + dv < tol


def _start_state(start: GadState, cfg: GadConfig) -> GadState:
    v = np.asarray(start.v, dtype=float)
    norm = float(np.linalg.norm(v))
    if norm == 0 or not np.all(np.isfinite(v)):
        raise InputError("start direction must be finite and nonzero")
    v = v / norm
    x = np.asarray(start.x, dtype=float) + cfg.init_offset * v
    return GadState(x, v, 0)


def run_reference_gad(provider, start: GadState, cfg: GadConfig) -> GadResult:
    """Drive the dynamics with exact (or finite-difference) derivatives.

    provider.derivs(x) -> (b, J); provider.cost counts its true-model
    evaluations.
    """
    state = _start_state(start, cfg)
    traj = [state]
    cost0 = int(provider.cost)
    converged = False
    for _ in range(cfg.t_max):
        b, J = provider.derivs(state.x)
        try:
            nxt = gad_step(state, b, J, cfg.dt)
        except DivergenceError as err:
            err.trajectory = tuple(traj)
            raise
        traj.append(nxt)
        if check_convergence(state, nxt, cfg.tol):
            state = nxt
            converged = True
            break
        state = nxt
    return GadResult(state.x, tuple(traj), converged, int(provider.cost) - cost0, 0)


def run_agpr_gad(problem, start: GadState, cfg: GadConfig,
                 al_cfg: ActiveLearningConfig, seed: int) -> GadResult:
    """Surrogate-driven search with information-directed data acquisition.

    The loop steps on the surrogate's posterior mean field.  After each
    step the posterior variances at the new point are combined through the
    current transition coefficients; if the combination exceeds sigma_sur,
    a design batch is proposed, labeled with the true model, and the
    surrogate is refit (including a fresh hyperparameter search).
    """
    from . import design  # deferred: design builds on gad_step
    from .problems import observe

    spsa_defaults = al_cfg.spsa if al_cfg.spsa is not None else design.SpsaParams()
    al = replace(
        al_cfg,
        design_dt=al_cfg.design_dt if al_cfg.design_dt is not None else cfg.dt,
        spsa=spsa_defaults,
    )

    streams = seed_streams(seed)
    init_rng = np.random.default_rng(streams["init-data"])
    noise_rng = np.random.default_rng(streams["noise"])
    mle_stream = streams["mle"]
    paths_stream = streams["paths"]
    spsa_stream = streams["spsa"]

    d = problem.dim
    state0 = _start_state(start, cfg)
    x0 = state0.x

    X0 = x0[None, :] + np.sqrt(al.init_spread) * init_rng.standard_normal((al.n_init, d))
    labels = np.array([observe(problem, xi, al.noise_var, noise_rng) for xi in X0])
    data = Dataset(problem.kind, X0, labels, eval_count=al.n_init)

    init_params = al.init_params
    if init_params is None:
        init_params = KernelParams.from_values(1.0, 1.0, al.noise_var)
    mle = optimize_hyperparams(
        data, init_params, al.mle_budget,
        seed=next_seed(mle_stream), fix_noise=not al.fit_noise,
    )
    model = fit(data, mle.params)

    # Runaway guard: a walker that has left the neighborhood of everything
    # ever observed by a wide margin is following surrogate fiction.  The
    # bound is fixed at the start so a drifting fit cannot stretch it.
    box = X0.max(axis=0) - X0.min(axis=0)
    runaway_radius = 10.0 * float(np.linalg.norm(box))

    def in_no_mans_land(x):
        return float(np.linalg.norm(x)) > runaway_radius

    state = state0
    traj = [state]
    post = predict_derivatives(model, state.x)
    coeffs = design.LinCoeffs(1.0, np.zeros(d), fallback=True)
    prev_x = None
    prev_post = None
    updates = 0
    design_log = []
    forced = False
    converged = False

    # A frozen walker is only believed once the data locally confirms the
    # fixed point: the posterior force variance at the endpoint must drop
    # to where the induced saddle displacement is small next to the
    # convergence tolerance of interest.  One design batch of noisy labels
    # cannot push the variance below noise_var / n_design, so the bar
    # stays just above that floor; without the allowance a noisy run
    # would audit forever.  The audit count breaks ties when the geometry
    # refuses to settle.
    audit_var = max(0.6 * al.sigma_sur,
                    1.1 * al.noise_var / al.n_design)
    audits_here = 0

    def do_update(at_x, at_v):
        nonlocal data, model, updates
        batch = design.propose_design(
            model, at_x, at_v, coeffs, al,
            seed=next_seed(spsa_stream), paths_seed=next_seed(paths_stream),
        )
        ys = np.array([observe(problem, pt, al.noise_var, noise_rng)
                       for pt in batch.points])
        data = data.extended(batch.points, ys)
        sub = data
        if data.n > al.mle_window:
            keep = np.linspace(0, data.n - 1, al.mle_window).round().astype(int)
            sub = Dataset(data.kind, data.locations[keep], data.labels[keep],
                          keep.size)
        res = optimize_hyperparams(
            sub, model.params, al.mle_budget_update,
            seed=next_seed(mle_stream), fix_noise=not al.fit_noise,
        )
        model = fit(data, res.params)
        design_log.append((updates, batch.points.copy(), ys))
        updates += 1

    for _ in range(cfg.t_max):
        try:
            nxt = gad_step(state, post.mu_b, post.mu_J, cfg.dt)
            runaway = in_no_mans_land(nxt.x)
        except DivergenceError:
            nxt = None
            runaway = True
        if runaway:
            if forced:
                raise DivergenceError(
                    "surrogate kept diverging after a forced update",
                    trajectory=tuple(traj),
                )
            do_update(state.x, state.v)
            post = predict_derivatives(model, state.x)
            forced = True
            continue
        forced = False
        traj.append(nxt)
        if check_convergence(state, nxt, cfg.tol):
            state = nxt
            converged = True
            break
        new_post = predict_derivatives(model, nxt.x)
        if prev_x is not None:
            coeffs = design.fit_lin_coeffs(
                nxt.x, state.x, prev_x,
                post.mu_b, prev_post.mu_b, post.mu_J, prev_post.mu_J, cfg.dt,
            )
        if design.reliability_check(new_post, coeffs, al.sigma_sur):
            do_update(nxt.x, nxt.v)
            new_post = predict_derivatives(model, nxt.x)
        prev_x, prev_post = state.x, post
        state, post = nxt, new_post

    return GadResult(
        state.x, tuple(traj), converged, data.eval_count, updates, tuple(design_log)
    )
