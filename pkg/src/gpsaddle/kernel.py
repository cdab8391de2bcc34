"""Squared-exponential kernel and its derivative covariance blocks.

The surrogate places a GP prior on a latent energy u with

    k(x, x') = eta * exp(-||x - x'||^2 / (2 l))

and the search consumes the force b = -grad u and its derivative
J = -hess u.  Covariances between any components of (u, b, J) are exact
derivatives of k; with tau = x - x' and phi = k(x, x') they are
polynomials in tau times phi.  Note the exponent denominator is 2l, not
2l^2, so l carries units of squared length.

The force-field surrogate (vector observations, one independent GP per
component) needs only the value/gradient blocks k_fg, k_gf, k_gg, which
carry no sign flips because the observed field is the GP itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError

__all__ = [
    "KernelParams",
    "energy_kernel",
    "cross_blocks",
    "joint_blocks",
]

_NEG_INF = float("-inf")


@dataclass(frozen=True)
class KernelParams:
    """SE-kernel hyperparameters, stored as logs so optimizers stay positive.

    log_noise = -inf encodes exactly noise-free observations.
    """

    log_eta: float
    log_length: float
    log_noise: float = _NEG_INF

    @staticmethod
    def from_values(eta: float, length: float, noise_var: float = 0.0) -> "KernelParams":
        if not (np.isfinite(eta) and eta > 0):
            raise InputError(f"eta must be positive and finite, got {eta}")
        if not (np.isfinite(length) and length > 0):
            raise InputError(f"length must be positive and finite, got {length}")
        if not (np.isfinite(noise_var) and noise_var >= 0):
            raise InputError(f"noise_var must be nonnegative and finite, got {noise_var}")
        log_noise = math.log(noise_var) if noise_var > 0 else _NEG_INF
        return KernelParams(math.log(eta), math.log(length), log_noise)

    @property
    def eta(self) -> float:
        return math.exp(self.log_eta)

    @property
    def length(self) -> float:
        return math.exp(self.log_length)

    @property
    def noise_var(self) -> float:
        return 0.0 if self.log_noise == _NEG_INF else math.exp(self.log_noise)


def _as_points(X) -> np.ndarray:
    """Coerce a point or list of points to a 2-d float array (n, d)."""
    A = np.asarray(X, dtype=float)
    if A.ndim == 1:
        A = A[None, :]
    if A.ndim != 2:
        raise InputError(f"expected points of shape (n, d), got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise InputError("non-finite coordinates in input points")
    return A


def _check_dims(X: np.ndarray, X2: np.ndarray) -> None:
    if X.shape[1] != X2.shape[1]:
        raise InputError(f"dimension mismatch: {X.shape[1]} vs {X2.shape[1]}")


def _tau(X: np.ndarray, X2: np.ndarray) -> np.ndarray:
    return X[:, None, :] - X2[None, :, :]


def _phi(T: np.ndarray, p: KernelParams) -> np.ndarray:
    """phi(tau) = eta * exp(-||tau||^2 / (2 l)), shape (n, m)."""
    sq = np.sum(T * T, axis=-1)
    return p.eta * np.exp(-sq / (2.0 * p.length))


def _d1(T: np.ndarray, phi: np.ndarray, l: float) -> np.ndarray:
    """d phi / d tau_i = -(tau_i / l) phi, shape (n, m, d)."""
    return -(T / l) * phi[..., None]


def _d2(T: np.ndarray, phi: np.ndarray, l: float) -> np.ndarray:
    """d^2 phi / d tau_i d tau_j = (tau_i tau_j / l^2 - delta_ij / l) phi."""
    d = T.shape[-1]
    eye = np.eye(d)
    out = T[..., :, None] * T[..., None, :] / l**2 - eye / l
    return out * phi[..., None, None]


def _d3(T: np.ndarray, phi: np.ndarray, l: float) -> np.ndarray:
    """Third tau-derivative, indices (e, i, j), shape (n, m, d, d, d).

    [(d_ei tau_j + d_ej tau_i + d_ij tau_e)/l^2 - tau_e tau_i tau_j / l^3] phi
    """
    d = T.shape[-1]
    eye = np.eye(d)
    te = T[..., :, None, None]
    ti = T[..., None, :, None]
    tj = T[..., None, None, :]
    sym = (
        eye[:, :, None] * tj + eye[:, None, :] * ti + eye[None, :, :] * te
    )
    out = sym / l**2 - te * ti * tj / l**3
    return out * phi[..., None, None, None]


def _d4(T: np.ndarray, phi: np.ndarray, l: float) -> np.ndarray:
    """Fourth tau-derivative, indices (i, j, e, g), shape (n, m, d, d, d, d)."""
    d = T.shape[-1]
    eye = np.eye(d)
    ti = T[..., :, None, None, None]
    tj = T[..., None, :, None, None]
    te = T[..., None, None, :, None]
    tg = T[..., None, None, None, :]
    dd = (
        eye[:, :, None, None] * eye[None, None, :, :]
        + eye[:, None, :, None] * eye[None, :, None, :]
        + eye[:, None, None, :] * eye[None, :, :, None]
    )
    dt = (
        eye[:, :, None, None] * te * tg
        + eye[:, None, :, None] * tj * tg
        + eye[:, None, None, :] * tj * te
        + eye[None, :, :, None] * ti * tg
        + eye[None, :, None, :] * ti * te
        + eye[None, None, :, :] * ti * tj
    )
    out = dd / l**2 - dt / l**3 + ti * tj * te * tg / l**4
    return out * phi[..., None, None, None, None]


# ---------------------------------------------------------------------------
# Vectorized blocks over point sets.  First index runs over rows (first
# argument), second over columns.  Sign bookkeeping: a derivative acting on
# the first argument contributes +d/d tau, on the second argument -d/d tau,
# and every b or J component carries one extra minus from b = -grad u,
# J = -hess u.

def k_uu(X, X2, p: KernelParams) -> np.ndarray:
    T = _tau(X, X2)
    return _phi(T, p)


def k_ub(X, X2, p: KernelParams) -> np.ndarray:
    """Cov(u(X_n), b_j(X2_m)), shape (n, m, d)."""
    T = _tau(X, X2)
    return _d1(T, _phi(T, p), p.length)


def k_bu(X, X2, p: KernelParams) -> np.ndarray:
    """Cov(b_i(X_n), u(X2_m)), shape (n, m, d)."""
    T = _tau(X, X2)
    return -_d1(T, _phi(T, p), p.length)


def k_uJ(X, X2, p: KernelParams) -> np.ndarray:
    """Cov(u(X_n), J_ij(X2_m)), shape (n, m, d, d).  Even in tau."""
    T = _tau(X, X2)
    return -_d2(T, _phi(T, p), p.length)


def k_bb(X, X2, p: KernelParams) -> np.ndarray:
    """Cov(b_i(X_n), b_j(X2_m)), shape (n, m, d, d)."""
    T = _tau(X, X2)
    return -_d2(T, _phi(T, p), p.length)


def k_bJ(X, X2, p: KernelParams) -> np.ndarray:
    """Cov(b_e(X_n), J_ij(X2_m)), shape (n, m, d, d, d)."""
    T = _tau(X, X2)
    return _d3(T, _phi(T, p), p.length)


def k_Jb(X, X2, p: KernelParams) -> np.ndarray:
    """Cov(J_ij(X_n), b_e(X2_m)), shape (n, m, d, d, d) with J indices first."""
    T = _tau(X, X2)
    out = -_d3(T, _phi(T, p), p.length)  # indices (e, i, j)
    return np.moveaxis(out, 2, 4)  # -> (i, j, e)


def k_JJ(X, X2, p: KernelParams) -> np.ndarray:
    """Cov(J_ij(X_n), J_eg(X2_m)), shape (n, m, d, d, d, d)."""
    T = _tau(X, X2)
    return _d4(T, _phi(T, p), p.length)


def k_fg(X, X2, p: KernelParams) -> np.ndarray:
    """Cov(f(X_n), df/dx_j (X2_m)) for a scalar GP f, shape (n, m, d)."""
    T = _tau(X, X2)
    return -_d1(T, _phi(T, p), p.length)


def k_gf(X, X2, p: KernelParams) -> np.ndarray:
    """Cov(df/dx_i (X_n), f(X2_m)), shape (n, m, d)."""
    T = _tau(X, X2)
    return _d1(T, _phi(T, p), p.length)


def k_gg(X, X2, p: KernelParams) -> np.ndarray:
    """Cov(df/dx_i (X_n), df/dx_j (X2_m)), shape (n, m, d, d)."""
    T = _tau(X, X2)
    return -_d2(T, _phi(T, p), p.length)


# ---------------------------------------------------------------------------
# Point-wise public API.

def energy_kernel(x, x2, p: KernelParams) -> float:
    """k(x, x') = eta exp(-||x - x'||^2 / (2 l))."""
    X, X2 = _as_points(x), _as_points(x2)
    _check_dims(X, X2)
    if X.shape[0] != 1 or X2.shape[0] != 1:
        raise InputError("energy_kernel takes single points; use k_uu for sets")
    return float(k_uu(X, X2, p)[0, 0])


def cross_blocks(x, X, p: KernelParams):
    """Covariance rows between training energies u(X) and (b, J) at x.

    Returns (K_ub, K_uJ) with K_ub[n, j] = Cov(u(X_n), b_j(x)) and
    K_uJ[n, :] = Cov(u(X_n), J(x)) with J flattened row-major, so the
    stacked (n, d + d^2) matrix is the cross-covariance used by the
    posterior formulas.
    """
    Xq = _as_points(x)
    Xs = _as_points(X)
    _check_dims(Xq, Xs)
    if Xq.shape[0] != 1:
        raise InputError("cross_blocks expects a single query point x")
    d = Xq.shape[1]
    ub = k_ub(Xs, Xq, p)[:, 0, :]
    uJ = k_uJ(Xs, Xq, p)[:, 0, :, :].reshape(len(Xs), d * d)
    return ub, uJ


def joint_blocks(x, x2, p: KernelParams):
    """Covariance blocks among (b, J) at two points.

    Returns (K_bb (d, d), K_bJ (d, d^2), K_JJ (d^2, d^2)), J flattened
    row-major.
    """
    X, X2 = _as_points(x), _as_points(x2)
    _check_dims(X, X2)
    if X.shape[0] != 1 or X2.shape[0] != 1:
        raise InputError("joint_blocks takes single points")
    d = X.shape[1]
    bb = k_bb(X, X2, p)[0, 0]
    bJ = k_bJ(X, X2, p)[0, 0].reshape(d, d * d)
    JJ = k_JJ(X, X2, p)[0, 0].reshape(d * d, d * d)
    return bb, bJ, JJ


def prior_var_b(p: KernelParams, d: int) -> np.ndarray:
    """Prior marginal variances of b: eta/l per component."""
    return np.full(d, p.eta / p.length)


def prior_var_J(p: KernelParams, d: int) -> np.ndarray:
    """Prior marginal variances of J: eta (1 + 2 delta_ij) / l^2."""
    out = np.full((d, d), p.eta / p.length**2)
    out[np.diag_indices(d)] *= 3.0
    return out
