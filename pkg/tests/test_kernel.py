"""Kernel blocks against finite differences and closed forms.

Every derivative block is cross-checked two ways: central finite
differences of the plain kernel (first and second order), and exact
chain identities that express higher blocks as derivatives of already
verified lower ones.  The d=1 closed forms are transcribed by hand.
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from gpsaddle.errors import InputError
from gpsaddle.kernel import (
    KernelParams,
    cross_blocks,
    energy_kernel,
    joint_blocks,
    k_bb,
    k_bJ,
    k_bu,
    k_fg,
    k_gf,
    k_gg,
    k_Jb,
    k_JJ,
    k_ub,
    k_uJ,
    k_uu,
    prior_var_b,
    prior_var_J,
)

P = KernelParams.from_values(eta=1.7, length=0.8)


def _pairs(d, n, seed):
    rng = np.random.default_rng(seed)
    return rng.uniform(-2, 2, size=(n, d)), rng.uniform(-2, 2, size=(n, d))


def _fd_x2(block_fn, x, x2, h=1e-4):
    """Central difference of a scalar-valued block in each x2 coordinate."""
    d = len(x2)
    cols = []
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        cols.append((block_fn(x, x2 + e) - block_fn(x, x2 - e)) / (2 * h))
    return np.stack(cols, axis=-1)


def _fd_x(block_fn, x, x2, h=1e-4):
    d = len(x)
    cols = []
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        cols.append((block_fn(x + e, x2) - block_fn(x - e, x2)) / (2 * h))
    return np.stack(cols, axis=-1)


def test_energy_kernel_zero_separation_is_eta():
    p = KernelParams.from_values(1.0, 1.0)
    assert energy_kernel([0.3, -0.4], [0.3, -0.4], p) == pytest.approx(1.0)


def test_energy_kernel_closed_form_value():
    p = KernelParams.from_values(2.0, 1.0)
    got = energy_kernel([0.0, 0.0], [1.0, 0.0], p)
    assert got == pytest.approx(2.0 * np.exp(-0.5), abs=1e-12)


def test_energy_kernel_symmetric_and_bounded():
    rng = np.random.default_rng(0)
    for _ in range(100):
        x, x2 = rng.normal(size=2), rng.normal(size=2)
        a = energy_kernel(x, x2, P)
        assert a == pytest.approx(energy_kernel(x2, x, P), rel=1e-14)
        assert 0.0 < a <= P.eta + 1e-15


@pytest.mark.parametrize("d", [1, 2, 3])
def test_first_order_blocks_match_fd(d):
    """Cov(u, b_j) and Cov(b_i, u) are minus/plus kernel gradients."""
    X, X2 = _pairs(d, 20, seed=d)
    k = lambda a, b: energy_kernel(a, b, P)
    for x, x2 in zip(X, X2):
        want_ub = -_fd_x2(k, x, x2)
        assert_allclose(k_ub(x[None], x2[None], P)[0, 0], want_ub, atol=1e-5)
        want_bu = -_fd_x(k, x, x2)
        assert_allclose(k_bu(x[None], x2[None], P)[0, 0], want_bu, atol=1e-5)


@pytest.mark.parametrize("d", [1, 2, 3])
def test_scalar_gradient_blocks_match_fd(d):
    """The force-mode blocks carry no observable sign flip."""
    X, X2 = _pairs(d, 20, seed=10 + d)
    k = lambda a, b: energy_kernel(a, b, P)
    for x, x2 in zip(X, X2):
        assert_allclose(k_fg(x[None], x2[None], P)[0, 0],
                        _fd_x2(k, x, x2), atol=1e-5)
        assert_allclose(k_gf(x[None], x2[None], P)[0, 0],
                        _fd_x(k, x, x2), atol=1e-5)
        got_gg = k_gg(x[None], x2[None], P)[0, 0]
        want_gg = _fd_x(lambda a, b: k_fg(a[None], b[None], P)[0, 0], x, x2)
        assert_allclose(got_gg, np.moveaxis(want_gg, -1, 0), atol=1e-4)


@pytest.mark.parametrize("d", [1, 2, 3])
def test_second_order_blocks_match_fd(d):
    X, X2 = _pairs(d, 17, seed=20 + d)
    for x, x2 in zip(X, X2):
        # Cov(b_i, b_j): differentiate the verified first-order block.
        want_bb = _fd_x2(lambda a, b: k_bu(a[None], b[None], P)[0, 0, :],
                         x, x2) * -1.0
        assert_allclose(k_bb(x[None], x2[None], P)[0, 0], want_bb, atol=1e-4)
        # Cov(u, J_ij): differentiate Cov(u, b_j) once more in x2.
        want_uJ = _fd_x2(lambda a, b: k_ub(a[None], b[None], P)[0, 0, :],
                         x, x2)
        want_uJ = np.moveaxis(want_uJ, -1, 0)
        assert_allclose(k_uJ(x[None], x2[None], P)[0, 0], want_uJ, atol=1e-4)


@pytest.mark.parametrize("d", [1, 2, 3])
def test_third_and_fourth_order_blocks_match_fd(d):
    """J rows are x-derivatives of b rows: J_ij = d b_j / d x_i."""
    X, X2 = _pairs(d, 12, seed=30 + d)
    for x, x2 in zip(X, X2):
        want_bJ = _fd_x2(lambda a, b: k_bb(a[None], b[None], P)[0, 0],
                         x, x2)
        want_bJ = np.moveaxis(want_bJ, -1, 1)  # (e, i, j)
        assert_allclose(k_bJ(x[None], x2[None], P)[0, 0], want_bJ, atol=1e-4)

        want_JJ = _fd_x(lambda a, b: k_bJ(a[None], b[None], P)[0, 0],
                        x, x2)
        want_JJ = np.moveaxis(want_JJ, -1, 0)  # (i, j, e, g)
        assert_allclose(k_JJ(x[None], x2[None], P)[0, 0], want_JJ,
                        atol=5e-4)


def test_jb_is_transposed_bj():
    rng = np.random.default_rng(3)
    x, x2 = rng.normal(size=3), rng.normal(size=3)
    got = k_Jb(x[None], x2[None], P)[0, 0]          # (i, j, e)
    want = k_bJ(x2[None], x[None], P)[0, 0]         # (e, i, j)
    assert_allclose(got, np.moveaxis(want, 0, -1), atol=1e-12)


def test_same_point_block_values():
    """Zero-separation moments of the prior."""
    p = KernelParams.from_values(eta=2.5, length=0.6)
    x = np.array([0.4, -1.1])
    bb, bJ, JJ = joint_blocks(x, x, p)
    assert_allclose(bb, np.eye(2) * p.eta / p.length, atol=1e-12)
    assert_allclose(bJ, 0.0, atol=1e-12)
    ub, uJ = cross_blocks(x, x[None], p)
    assert_allclose(ub, 0.0, atol=1e-12)
    # Cov(u, J_ii) = +Var(du/dx_i) for a stationary prior.
    assert_allclose(uJ.reshape(2, 2), np.eye(2) * p.eta / p.length,
                    atol=1e-12)
    JJ = JJ.reshape(2, 2, 2, 2)
    assert JJ[0, 0, 0, 0] == pytest.approx(3 * p.eta / p.length**2)
    assert JJ[0, 1, 0, 1] == pytest.approx(p.eta / p.length**2)
    assert JJ[0, 0, 1, 1] == pytest.approx(p.eta / p.length**2)


def test_prior_variances_match_blocks():
    p = KernelParams.from_values(eta=1.3, length=2.2)
    x = np.zeros(3)
    bb, _, JJ = joint_blocks(x, x, p)
    assert_allclose(prior_var_b(p, 3), np.diag(bb), atol=1e-14)
    assert_allclose(prior_var_J(p, 3).ravel(),
                    np.diag(JJ.reshape(9, 9)), atol=1e-14)


def test_stacked_covariance_is_psd():
    """The (u, b, J) covariance over several points is a covariance."""
    rng = np.random.default_rng(7)
    d = 2
    X = rng.uniform(-1.5, 1.5, size=(5, d))
    n = len(X)
    m = 1 + d + d * d
    M = np.zeros((n * m, n * m))
    for a in range(n):
        for c in range(n):
            xa, xc = X[a][None], X[c][None]
            blk = np.zeros((m, m))
            blk[0, 0] = k_uu(xa, xc, P)[0, 0]
            blk[0, 1:1 + d] = k_ub(xa, xc, P)[0, 0]
            blk[1:1 + d, 0] = k_bu(xa, xc, P)[0, 0]
            blk[0, 1 + d:] = k_uJ(xa, xc, P)[0, 0].ravel()
            blk[1 + d:, 0] = k_uJ(xc, xa, P)[0, 0].ravel()
            blk[1:1 + d, 1:1 + d] = k_bb(xa, xc, P)[0, 0]
            blk[1:1 + d, 1 + d:] = k_bJ(xa, xc, P)[0, 0].reshape(d, d * d)
            blk[1 + d:, 1:1 + d] = k_Jb(xa, xc, P)[0, 0].reshape(d * d, d)
            blk[1 + d:, 1 + d:] = k_JJ(xa, xc, P)[0, 0].reshape(d * d, d * d)
            M[a * m:(a + 1) * m, c * m:(c + 1) * m] = blk
    M += 1e-10 * np.eye(n * m)
    assert_allclose(M, M.T, atol=1e-10)
    eig = np.linalg.eigvalsh(M)
    assert eig.min() >= -1e-8


def test_translation_invariance():
    rng = np.random.default_rng(11)
    x, x2 = rng.normal(size=2), rng.normal(size=2)
    t = np.array([3.7, -1.9])
    assert_allclose(k_bb(x[None], x2[None], P),
                    k_bb((x + t)[None], (x2 + t)[None], P), atol=1e-12)
    assert_allclose(k_JJ(x[None], x2[None], P),
                    k_JJ((x + t)[None], (x2 + t)[None], P), atol=1e-12)


def test_blocks_linear_in_eta():
    p1 = KernelParams.from_values(1.1, 0.9)
    p2 = KernelParams.from_values(2.2, 0.9)
    x, x2 = np.array([0.2, 0.5]), np.array([-0.3, 1.0])
    for fn in (k_uu, k_ub, k_bb, k_bJ, k_JJ):
        assert_allclose(2.0 * fn(x[None], x2[None], p1),
                        fn(x[None], x2[None], p2), rtol=1e-12)


def test_one_dimensional_closed_forms():
    """Hand-derived tau polynomials for every block in d=1."""
    eta, length, tau = 1.6, 0.45, 0.7
    p = KernelParams.from_values(eta, length)
    x, x2 = np.array([tau]), np.array([0.0])
    phi = eta * np.exp(-tau**2 / (2 * length))

    assert k_uu(x[None], x2[None], p)[0, 0] == pytest.approx(phi)
    assert k_ub(x[None], x2[None], p)[0, 0, 0] == pytest.approx(
        -tau / length * phi)
    assert k_fg(x[None], x2[None], p)[0, 0, 0] == pytest.approx(
        tau / length * phi)
    assert k_bb(x[None], x2[None], p)[0, 0, 0, 0] == pytest.approx(
        (1 / length - tau**2 / length**2) * phi)
    assert k_gg(x[None], x2[None], p)[0, 0, 0, 0] == pytest.approx(
        (1 / length - tau**2 / length**2) * phi)
    assert k_bJ(x[None], x2[None], p)[0, 0, 0, 0, 0] == pytest.approx(
        (3 * tau / length**2 - tau**3 / length**3) * phi)
    assert k_JJ(x[None], x2[None], p)[0, 0, 0, 0, 0, 0] == pytest.approx(
        (3 / length**2 - 6 * tau**2 / length**3 + tau**4 / length**4) * phi)


def test_params_validation():
    with pytest.raises(InputError):
        KernelParams.from_values(-1.0, 1.0)
    with pytest.raises(InputError):
        KernelParams.from_values(1.0, 0.0)
    with pytest.raises(InputError):
        KernelParams.from_values(1.0, 1.0, noise_var=-0.1)
    p = KernelParams.from_values(1.0, 1.0, noise_var=0.0)
    assert p.noise_var == 0.0


def test_input_errors():
    with pytest.raises(InputError):
        energy_kernel([0.0, 0.0], [1.0], P)
    with pytest.raises(InputError):
        energy_kernel([np.nan, 0.0], [0.0, 0.0], P)
    with pytest.raises(InputError):
        energy_kernel(np.zeros((2, 2)), np.zeros(2), P)
    with pytest.raises(InputError):
        cross_blocks(np.zeros((2, 2)), np.zeros((3, 2)), P)
    with pytest.raises(InputError):
        joint_blocks(np.zeros(2), np.zeros(3), P)
