import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scatterlab import greens as g
from scatterlab.errors import DomainError, PoleError

# Derived by direct numpy summation over |xi| <= 1500 and 2500 (agreeing to 1e-11).
GREEN_REAL_OFFSET = -0.1335276005631
# 2 i sum_xi 1/(|xi|^4 + 1); disc sum to |xi| = 3000 plus the pi / R^2 tail.
GREEN_IMAG_AXIS = 9.59365150


def test_coeff_examples():
    assert g.coeff(5, (1, 0)) == -0.25
    assert g.coeff(1j, (0, 0)) == pytest.approx(1j)
    assert g.coeff(2.5, (1, 1)) == -2.0
    with pytest.raises(PoleError):
        g.coeff(5, (1, 2))


def test_pole_rejected():
    with pytest.raises(PoleError):
        g.green_diff(25, 2.5, (0, 0))


def test_identical_parameters_vanish():
    assert g.green_diff(2.5, 2.5, (0.3, 0.1)).value == 0


def test_imaginary_pair_value():
    r = g.green_diff(1j, -1j, (0, 0), tol=1e-5)
    assert abs(r.value.real) < 1e-12
    assert r.value.imag == pytest.approx(GREEN_IMAG_AXIS, abs=1e-5 + 1e-7)


def test_real_pair_value():
    r = g.green_diff(2.5, 3.5, (0.5, 0), tol=1e-5)
    assert abs(r.value.imag) < 1e-12
    assert r.value.real == pytest.approx(GREEN_REAL_OFFSET, abs=r.tail_bound + 1e-9)


lams = st.floats(-12, 12, allow_nan=False).filter(lambda v: abs(v - round(v)) > 1e-3)
points = st.tuples(st.floats(0, 1), st.floats(0, 1))


@given(lams, lams, points)
@settings(max_examples=15, deadline=None)
def test_antisymmetric_and_real(lam, mu, x):
    a = g.green_diff(lam, mu, x, tol=1e-3)
    b = g.green_diff(mu, lam, x, tol=1e-3)
    assert abs(a.value + b.value) <= 1e-3
    assert abs(a.value.imag) <= 1e-3


@given(lams, lams, points)
@settings(max_examples=10, deadline=None)
def test_doubling_radius_within_tail(lam, mu, x):
    a = g.green_diff(lam, mu, x, tol=1e-3)
    b = g.green_diff(lam, mu, x, radius_sq=2 * a.radius_sq)
    assert abs(a.value - b.value) <= a.tail_bound


def test_scaled_examples():
    x = np.array([0.3, 0.7])
    assert g.scaled_green_diff(2.5, 1, x, 1j, tol=1e-3).value == g.green_diff(2.5, 1j, x, tol=1e-3).value
    assert (g.scaled_green_diff(2.5 / 16, 4, (2, 0), 1j, tol=1e-3).value
            == g.green_diff(2.5, 1j, (0.5, 0), tol=1e-3).value)
    with pytest.raises(DomainError):
        g.scaled_green_diff(1.0, 0, x, 1j)


@given(st.floats(0.1, 12).filter(lambda v: abs(v - round(v)) > 1e-3), st.integers(1, 4), st.integers(1, 4),
       st.tuples(st.floats(0, 1), st.floats(0, 1)))
@settings(max_examples=10, deadline=None)
def test_scaled_bitwise_across_sizes(lam, p, q, y):
    L, M = 2 ** p, 2 ** q
    a = g.scaled_green_diff(lam / (L * L), L, np.array(y) * L, 1j, tol=1e-3)
    b = g.scaled_green_diff(lam / (M * M), M, np.array(y) * M, 1j, tol=1e-3)
    assert a.value == b.value


def test_torus_helpers():
    assert np.allclose(g.torus_reduce([1.25, -0.25]), [0.25, 0.75])
    assert g.torus_distance([0.95, 0.0], [0.05, 0.0]) == pytest.approx(0.1)
    assert g.torus_distance([0, 0], [3, 1], size=4) == pytest.approx(math.sqrt(2))


def test_quartic_tail_dominates_sum():
    r = 12.0
    a = np.arange(-200, 201)
    n = (a[:, None] ** 2 + a[None, :] ** 2).astype(float)
    direct = np.sum(1 / n[n > r * r] ** 2) + math.pi / 200 ** 2
    assert direct <= g.quartic_tail(r)
    assert g.quartic_tail(r) < 3 * direct


def test_kernel_basics():
    k = g.SmoothingKernel(0.1)
    assert k.hat((0, 0)) == 1.0
    assert k.hat((3, 4)) == k.hat((5, 0)) == k.hat((-4, 3))
    assert isinstance(k.hat((1, 2)), float)
    with pytest.raises(DomainError):
        g.SmoothingKernel(0.6)
    u = np.array([[0.0, 0.0], [0.2, 0.0]])
    vals = k(u)
    assert vals[0] == pytest.approx(k.sup()) and vals[1] == 0.0


def _hat_by_grid(radius, zeta, m=1024):
    """Riemann sum of chi_R(u) e(zeta.u) on an m x m grid of the unit torus."""
    k = g.SmoothingKernel(radius)
    t = np.arange(m) / m
    u = np.stack(np.meshgrid(t, t, indexing="ij"), axis=-1)
    w = k(u)
    phase = np.exp(2j * np.pi * (zeta[0] * u[..., 0] + zeta[1] * u[..., 1]))
    return complex(np.sum(w * phase)) / m ** 2


@pytest.mark.parametrize("zeta", [(1, 0), (3, 4), (7, 2), (12, 5)])
def test_kernel_hat_against_grid(zeta):
    k = g.SmoothingKernel(0.25)
    ref = _hat_by_grid(0.25, zeta)
    assert abs(ref.imag) < 1e-12
    assert k.hat(zeta) == pytest.approx(ref.real, abs=1e-9)


def test_kernel_hat_decay_envelope():
    # radial quadrature at fine step: |zeta| R = 20 -> ~4.6e-7, 40 -> ~1.8e-9
    k = g.SmoothingKernel(0.5)
    z20 = np.array([[40, m] for m in range(0, 12)])
    z40 = np.array([[80, m] for m in range(0, 20)])
    assert np.max(np.abs(k.hat(z20))) < 1e-6
    assert np.max(np.abs(k.hat(z40))) < 5e-9


def test_kernel_cache_roundtrip(tmp_path):
    k = g.SmoothingKernel(0.125)
    val = k.hat((5, 5))
    path = tmp_path / "hat.csv"
    g.save_kernel_cache(path)
    g._HAT_CACHE.clear()
    assert g.load_kernel_cache(path) >= 1
    assert k.hat((5, 5)) == val
