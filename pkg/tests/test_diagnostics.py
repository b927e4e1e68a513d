import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scatterlab import diagnostics as dg
from scatterlab import ensemble as en
from scatterlab import lattice as la
from scatterlab import spectral as sp
from scatterlab.greens import SmoothingKernel
from scatterlab.errors import DomainError

ORIGIN = np.zeros((1, 2))


@pytest.fixture(scope="module")
def table():
    return la.build_table(60_000)


@pytest.fixture(scope="module")
def single():
    efs, _ = sp.solve_gap(sp.ScattererConfig(0.0, ORIGIN), (4, 5), 1e-3)
    return efs[0]


@pytest.fixture(scope="module")
def quad():
    cfg = sp.ScattererConfig(0.9, np.random.default_rng(21).random((4, 2)))
    efs, _ = sp.solve_gap(cfg, (25, 26), 1e-3)
    return efs[0]


def test_trig_polynomial_basics():
    a = dg.default_test_polynomial()
    assert a.mean == 1.0 and a.degree == 1 and a.sup_bound() == 2.0
    assert a(np.array([0.0, 0.3])) == pytest.approx(2.0)
    assert a(np.array([0.5, 0.3])) == pytest.approx(0.0, abs=1e-15)
    assert dg.TrigPolynomial.parse(a.format()) == a
    with pytest.raises(DomainError):
        dg.TrigPolynomial({(1, 0): 1.0})


coef = st.complex_numbers(max_magnitude=5, allow_nan=False, allow_infinity=False)


@given(st.dictionaries(st.tuples(st.integers(-3, 3), st.integers(-3, 3)), coef, max_size=5),
       st.floats(-3, 3))
def test_trig_polynomial_roundtrip(raw, mean):
    coeffs = {(0, 0): mean}
    for (z1, z2), v in raw.items():
        if (z1, z2) == (0, 0) or (-z1, -z2) in coeffs:
            continue
        coeffs[(z1, z2)] = v
        coeffs[(-z1, -z2)] = v.conjugate()
    a = dg.TrigPolynomial(coeffs)
    assert dg.TrigPolynomial.parse(a.format()) == a


def test_single_mode_density_flat(single):
    kernel = SmoothingKernel(0.1)
    amp = dg.finite_amplitudes([[1, 2]], [0.7 - 0.2j])
    x = np.random.default_rng(0).random((25, 2))
    big, _ = dg.smoothed_density(single, amp, kernel, x)
    g = abs(0.7 - 0.2j) ** 2 / (5 - single.lambda_star) ** 2
    assert np.ptp(big) <= 1e-10 * g
    assert big[0] == pytest.approx(g, rel=1e-12)


def test_torus_average_is_one(quad, table):
    kernel = SmoothingKernel(0.1)
    amp = dg.retained_amplitudes(quad, table)
    w, zmax, _ = dg.density_weights(quad, amp, kernel)
    l2 = sp.l2_norm_sq(quad.lambda_star, amp, table, dg.DEFAULT_TOL)
    assert w[zmax, zmax] / l2.value == pytest.approx(1.0, abs=1e-12)
    m = 64
    t = (np.arange(m) + 0.5) / m
    pts = np.stack(np.meshgrid(t, t, indexing="ij"), axis=-1).reshape(-1, 2)
    rec = dg.density_record(quad, amp, kernel, pts, table)
    assert abs(rec.phi.mean() - 1.0) <= 1e-6 + rec.zeta_tail_estimate / rec.l2


def test_density_nonnegative(quad, table):
    kernel = SmoothingKernel(0.05)
    amp = dg.retained_amplitudes(quad, table)
    x = np.random.default_rng(4).random((100, 2))
    big, _ = dg.smoothed_density(quad, amp, kernel, x, table)
    assert big.min() >= -1e-8


def _density_by_quadrature(ef, amp, kernel, x, m=512):
    """FFT synthesis of G on an m x m grid, then direct convolution with chi_R."""
    grid = np.zeros((m, m), dtype=complex)
    n = (amp.support ** 2).sum(axis=1)
    grid[amp.support[:, 0] % m, amp.support[:, 1] % m] = amp.values / (n - ef.lambda_star)
    field = np.fft.ifft2(grid) * m * m
    dens = np.abs(field) ** 2
    t = np.arange(m) / m
    u = np.stack(np.meshgrid(t, t, indexing="ij"), axis=-1)
    return np.array([np.sum(kernel(np.asarray(p) - u) * dens) / m ** 2 for p in x])


def test_density_matches_real_space_quadrature(single, table):
    kernel = SmoothingKernel(0.1)
    amp = sp.disc_amplitudes(single.coefficients, single.points, 3000)
    x = np.array([[0.0, 0.0], [0.13, 0.71], [0.5, 0.5], [0.9, 0.05]])
    ours = dg.density_record(single, amp, kernel, x, table, tol=0.5).Phi
    ref = _density_by_quadrature(single, amp, kernel, x)
    assert np.allclose(ours, ref, rtol=1e-4, atol=0)


def test_two_point(quad, table):
    kernel = SmoothingKernel(0.05)
    amp = dg.retained_amplitudes(quad, table)
    x, y = np.array([0.1, 0.1]), np.array([0.6, 0.4])
    assert dg.two_point(quad, amp, kernel, x, y, table) == dg.two_point(quad, amp, kernel, y, x, table)
    with pytest.raises(DomainError):
        dg.two_point(quad, amp, kernel, x, x, table)
    flat = dg.finite_amplitudes([[1, 2]], [1.0])
    _, phi = dg.smoothed_density(quad, flat, kernel, x)
    assert dg.two_point(quad, flat, kernel, x, y) == pytest.approx(phi ** 2)


def test_verdict_on_synthetic_data():
    r = np.linspace(0.2, 3, 30)
    v = dg.localization_verdict(np.stack([r, np.exp(-r)], axis=1))
    assert v.exponential.model.rate == pytest.approx(1.0)
    assert v.exponential.residual == pytest.approx(0.0, abs=1e-12)
    assert v.better == "exponential"
    p = dg.localization_verdict(np.stack([r, r ** -4.0], axis=1))
    assert p.power.model.rate == pytest.approx(4.0)
    assert p.better == "power"
    with pytest.raises(DomainError):
        dg.localization_verdict([[0.5, 1.0], [0.6, 0.5]])


@given(st.integers(0, 2 ** 32 - 1))
@settings(max_examples=25)
def test_verdict_minimal_constant(seed):
    rng = np.random.default_rng(seed)
    r = np.sort(rng.uniform(0.1, 2, 20))
    v = np.exp(-2 * r) * rng.lognormal(0, 0.5, 20)
    model = dg.DecayModel("exponential", 1.0, 2.0)
    out = dg.localization_verdict(np.stack([r, v], axis=1), model)
    assert out.min_constant >= np.max(v / model(r)) * (1 - 1e-12)
    assert np.all(v <= out.min_constant * model(r) * (1 + 1e-12))


def test_matrix_element_identities(quad, table):
    amp = dg.retained_amplitudes(quad, table)
    one = dg.TrigPolynomial({(0, 0): 1.0})
    me = dg.matrix_element(quad, amp, one, table)
    assert me.value.real == sp.l2_norm_sq(quad.lambda_star, amp, table, dg.DEFAULT_TOL).value
    assert me.value.imag == 0.0
    a = dg.default_test_polynomial()
    val = dg.matrix_element(quad, amp, a, table).value
    assert abs(val.imag) <= 1e-8 * abs(val)


def test_matrix_element_conjugate_recomputation(quad, table):
    amp = dg.retained_amplitudes(quad, table)
    a = dg.TrigPolynomial({(0, 0): 1.0, (2, 1): 0.3 - 0.4j, (-2, -1): 0.3 + 0.4j})
    g = {k: v / ((k[0] ** 2 + k[1] ** 2) - quad.lambda_star) for k, v in amp.as_dict().items()}
    direct = 0j
    for (z1, z2), c in a.coefficients.items():
        # <a Psi, Psi> = sum_xi,zeta a^(zeta) g(xi - zeta) conj(g(xi))
        direct += c * sum(g[k] * np.conj(g.get((k[0] + z1, k[1] + z2), 0)) for k in g)
    val = dg.matrix_element(quad, amp, a, table).value
    assert val == pytest.approx(direct, rel=1e-10)


def test_matrix_element_single_mode_zero_mean(single):
    a = dg.TrigPolynomial({(1, 0): 0.5, (-1, 0): 0.5})
    amp = dg.finite_amplitudes([[2, 1]], [1.0])
    assert dg.matrix_element(single, amp, a).value == 0


def test_annulus_split(quad, table):
    amp = dg.retained_amplitudes(quad, table)
    l2 = sp.l2_norm_sq(quad.lambda_star, amp, table, dg.DEFAULT_TOL)
    m_in, m_out = dg.annulus_split(quad, amp, 0.25, table)
    assert m_in >= 0 and m_out >= 0
    assert m_in + m_out == pytest.approx(l2.value, rel=1e-12)
    small = dg.finite_amplitudes([[3, 4], [5, 0]], [1.0, 0.5j])
    s_in, s_out = dg.annulus_split(quad, small, 0.1)
    assert s_out == pytest.approx(0.0, abs=1e-15) and s_in > 0
    with pytest.raises(DomainError):
        dg.annulus_split(quad, amp, 0.5, table)


def test_circle_statistic(single, table):
    ones = dg.finite_amplitudes(table.points(65), np.ones(la.r2(65)))
    assert dg.circle_statistic(ones, 65, table) == la.r2(65)
    assert dg.circle_statistic(ones, 3, table) == 0.0
    amp = sp.disc_amplitudes([1.0], ORIGIN, 200)
    for n in (25, 50, 65):
        assert dg.circle_statistic(amp, n, table) == pytest.approx(la.r2(n), abs=1e-12)


@pytest.fixture(scope="module")
def lattice_efs():
    params = en.DisorderParams(0.05, 2)
    out = []
    for i in range(5):
        ef, status = en.solve_realization(params, 0.6, (25, 26), 7, i, 1e-2)
        if ef is not None:
            out.append(ef)
    return out


def test_profile_single_realization(lattice_efs):
    rows = dg.coefficient_profile(lattice_efs[:1], (0.25, 0.1))
    assert len(rows) == 4
    assert sum(r.mean for r in rows) == pytest.approx(1.0)
    assert all(r.count == 1 and r.stderr == 0 for r in rows)


def test_profile_relabeling_invariant(lattice_efs):
    a = dg.coefficient_profile(lattice_efs, "max")
    b = dg.coefficient_profile(lattice_efs[::-1], "max")
    assert a == b
    assert a[0].dist == 0.0


def test_profile_flat_for_symmetric_coefficients(lattice_efs):
    ef = lattice_efs[0]
    flat = sp.Eigenfunction(ef.lambda_star, ef.kernel_vector, np.full(4, 0.5 + 0j), ef.d_vector,
                            ef.residual, ef.gap, ef.points, ef.phase, ef.L, ef.origin_labels)
    rows = dg.coefficient_profile([flat], (0, 0))
    assert {r.mean for r in rows} == {0.25}


def test_profile_rejects_mixed_sizes(lattice_efs, single):
    with pytest.raises(DomainError):
        dg.coefficient_profile([lattice_efs[0], single], (0, 0))


def test_smoothing_window():
    w = dg.smoothing_window(1e6, 0.1)
    assert w["lower"] == pytest.approx(0.1) and w["lower_ok"] and w["upper_ok"]
    assert not dg.smoothing_window(1e4, 0.05)["lower_ok"]
