import math
from dataclasses import replace

import numpy as np
import pytest

from ScatterLab.utils.errors import (
    ConfigError,
    EmptyTruncationError,
    MeasureError,
    NormalizationError,
    ParameterError,
)
from ScatterLab.utils.greens import VOLUME, green_full, green_truncated
from ScatterLab.utils.lattice import QuasiMomentum, enumerate_window
from ScatterLab.utils.quantize import (
    MomentumMeasure,
    SphericalHarmonicIndex,
    Symbol,
    direction_mass,
    harmonics,
    measure_expectation,
    momentum_measure,
    nonorthogonality_threshold,
    op_matrix_element,
    op_norm_bound,
    position_expectation,
    top_mass_fraction,
    truncation_matrix_gap,
    vanishing_guaranteed,
    ylm,
)
from ScatterLab.utils.spectral import ScattererConfig, perturbed_spectrum

X0 = (0.3, 1.1, 2.0)


def unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


@pytest.fixture(scope="module")
def full_vector(reference_k, spectrum_0_250):
    root = perturbed_spectrum(reference_k, ScattererConfig(X0), (100.0, 100.2))[0]
    return green_full(reference_k, X0, root.lam, spectrum=spectrum_0_250)


def test_low_order_values():
    for d in ([1.0, 0.0, 0.0], unit([1.0, -1.0, 0.3]), [0.0, 0.0, -1.0]):
        assert ylm(SphericalHarmonicIndex(0, 0), d) == pytest.approx(0.2820948, abs=1e-7)
    assert ylm(SphericalHarmonicIndex(1, 0), [0.0, 0.0, 1.0]) == pytest.approx(0.4886025, abs=1e-7)


def test_closed_form_degree_two():
    d = unit([0.3, -0.8, 0.5])
    theta, phi = math.acos(d[2]), math.atan2(d[1], d[0])
    expected = -math.sqrt(15.0 / (8.0 * math.pi)) * math.sin(theta) * math.cos(theta) * np.exp(1j * phi)
    assert ylm(SphericalHarmonicIndex(2, 1), d) == pytest.approx(expected, abs=1e-12)
    expected_20 = math.sqrt(5.0 / (16.0 * math.pi)) * (3.0 * math.cos(theta) ** 2 - 1.0)
    assert ylm(SphericalHarmonicIndex(2, 0), d) == pytest.approx(expected_20, abs=1e-12)


def test_negative_order_symmetry():
    d = unit([-0.2, 0.7, 0.1])
    for l in range(1, 6):
        for m in range(1, l + 1):
            pos = ylm(SphericalHarmonicIndex(l, m), d)
            neg = ylm(SphericalHarmonicIndex(l, -m), d)
            assert neg == pytest.approx((-1) ** m * np.conj(pos), abs=1e-12)


def test_orthonormality_by_product_quadrature():
    lmax = 8
    nodes, weights = np.polynomial.legendre.leggauss(24)
    phis = 2.0 * math.pi * np.arange(24) / 24
    cos_t, phi = np.meshgrid(nodes, phis, indexing="ij")
    sin_t = np.sqrt(1.0 - cos_t**2)
    directions = np.stack([sin_t * np.cos(phi), sin_t * np.sin(phi), cos_t], axis=-1).reshape(-1, 3)
    w = (weights[:, None] * np.full(24, 2.0 * math.pi / 24)[None, :]).ravel()
    table = harmonics(lmax, directions)
    gram = (table * w[None, :]) @ table.conj().T
    np.testing.assert_allclose(gram, np.eye((lmax + 1) ** 2), atol=1e-10)


def test_addition_theorem():
    rng = np.random.default_rng(11)
    d = rng.normal(size=(50, 3))
    d = np.vstack([d / np.linalg.norm(d, axis=1)[:, None], [[0.0, 0.0, 1.0], [0.0, 0.0, -1.0]]])
    table = harmonics(10, d)
    for l in range(11):
        shell = np.sum(np.abs(table[l * l : (l + 1) ** 2]) ** 2, axis=0)
        np.testing.assert_allclose(shell, (2 * l + 1) / (4.0 * math.pi), rtol=1e-12)


def test_non_unit_direction_rejected():
    with pytest.raises(NormalizationError):
        ylm(SphericalHarmonicIndex(1, 0), [0.0, 0.0, 2.0])
    with pytest.raises(ParameterError):
        SphericalHarmonicIndex(1, 2)


def test_nonorthogonality_threshold(reference_k):
    assert nonorthogonality_threshold(reference_k, (1, 0, 0)) == pytest.approx(0.4142136, abs=1e-7)
    assert nonorthogonality_threshold(QuasiMomentum((0.25, 0.1, 0.2)), (2, 0, 0)) == pytest.approx(0.0)
    with pytest.raises(ParameterError):
        nonorthogonality_threshold(reference_k, (0, 0, 0))
    assert vanishing_guaranteed(reference_k, (1, 0, 0), 0.2)
    assert not vanishing_guaranteed(reference_k, (1, 0, 0), 0.3)


def test_identity_symbol_gives_one(full_vector):
    assert op_matrix_element(Symbol.constant(1.0), full_vector, full_vector) == pytest.approx(1.0, abs=1e-12)
    assert position_expectation((0, 0, 0), full_vector) == 1.0


def test_position_expectation_conjugate_pair(full_vector):
    plus = position_expectation((1, -2, 0), full_vector)
    minus = position_expectation((-1, 2, 0), full_vector)
    assert minus == pytest.approx(np.conj(plus), abs=1e-14)
    assert abs(plus) <= 1.0


def test_off_diagonal_components_vanish_on_narrow_truncation(reference_k, spectrum_0_250):
    zeta = (1, 0, 0)
    L = 0.2
    assert vanishing_guaranteed(reference_k, zeta, L)
    for root in perturbed_spectrum(reference_k, ScattererConfig(X0), (100.0, 100.5))[::4]:
        v = green_truncated(reference_k, X0, root.lam, L, spectrum=spectrum_0_250)
        assert position_expectation(zeta, v) == 0j
        assert op_matrix_element(Symbol.fourier_mode(zeta, 2, 1, 0.7 - 0.1j), v, v) == 0j


def test_momentum_symbol_direct_sum(full_vector):
    sym = Symbol.fourier_mode((0, 0, 0), 2, 0, 1.0)
    value = op_matrix_element(sym, full_vector, full_vector)
    y20 = harmonics(2, full_vector.directions)[SphericalHarmonicIndex(2, 0).flat].real
    g = full_vector.normalized_coefficients()
    assert value.real == pytest.approx(VOLUME * float(np.sum(y20 * np.abs(g) ** 2)), rel=1e-10)
    assert abs(value.imag) < 1e-12


def test_op_is_linear_in_the_symbol(full_vector):
    rng = np.random.default_rng(5)
    keys = [((0, 0, 0), 0, 0), ((0, 0, 0), 3, -2), ((1, 0, 0), 1, 1), ((0, -1, 1), 2, 0), ((2, 1, 0), 4, -3)]
    sym = Symbol({key: complex(*rng.normal(size=2)) for key in keys})
    assert len(list(sym.components())) == len(keys)
    value = op_matrix_element(sym, full_vector, full_vector)
    parts = sum(op_matrix_element(c, full_vector, full_vector) for c in sym.components())
    assert value == pytest.approx(parts, rel=1e-12, abs=1e-12)
    doubled = op_matrix_element(sym + sym, full_vector, full_vector)
    assert doubled == pytest.approx(2.0 * value, rel=1e-12, abs=1e-12)


def test_momentum_symbols_agree_with_measure(full_vector):
    mu = momentum_measure(full_vector)
    harmonic = {((0, 0, 0), l, m): 1.0 / (1 + l + abs(m)) for l in range(1, 5) for m in range(-l, l + 1)}
    sym = Symbol.constant(0.5) + Symbol(harmonic)
    expected = measure_expectation(sym, mu)
    assert op_matrix_element(sym, full_vector, full_vector) == pytest.approx(expected, rel=1e-12, abs=1e-12)
    # Fourier modes in x integrate out of the measure
    shifted = sym + Symbol.fourier_mode((1, 0, 0), 1, 0, 3.0)
    assert measure_expectation(shifted, mu) == pytest.approx(expected, rel=1e-12, abs=1e-12)


def test_symmetric_symbols_give_hermitian_matrix(reference_k, spectrum_0_250):
    v = green_full(reference_k, X0, 80.000321, cutoff=160.0, spectrum=spectrum_0_250)
    w = green_full(reference_k, X0, 80.400123, cutoff=160.0, spectrum=spectrum_0_250)
    sym = (
        Symbol.fourier_mode((0, 0, 0), 2, 0, 0.8)
        + Symbol.fourier_mode((1, 1, 0), 0, 0, 0.3 + 0.2j)
        + Symbol.fourier_mode((-1, -1, 0), 0, 0, 0.3 - 0.2j)
    )
    assert sym.is_real()
    assert op_matrix_element(sym, v, w) == pytest.approx(np.conj(op_matrix_element(sym, w, v)), abs=1e-12)


def test_incompatible_vectors(reference_k):
    v = green_full(reference_k, X0, 20.0001, cutoff=60.0)
    w = green_full(reference_k, (0.0, 0.0, 0.0), 20.0001, cutoff=60.0)
    with pytest.raises(ConfigError):
        op_matrix_element(Symbol.constant(), v, w)


def test_momentum_measure_mass(full_vector):
    raw = momentum_measure(full_vector, normalize=False)
    assert raw.total_mass * VOLUME == pytest.approx(full_vector.norm_sq)
    mu = momentum_measure(full_vector)
    assert mu.total_mass == pytest.approx(1.0)
    theta, phi = mu.angles()
    assert np.all((theta >= 0.0) & (theta <= math.pi))
    assert np.all((phi >= 0.0) & (phi <= 2.0 * math.pi))


def test_single_mode_measure(reference_k):
    spectrum = enumerate_window(reference_k, (0.0, 30.0))
    n = float(spectrum.energies[150])
    gap = min(n - spectrum.energies[149], spectrum.energies[151] - n)
    v = green_truncated(reference_k, X0, n - 0.25 * gap, 0.5 * gap, spectrum=spectrum)
    mu = momentum_measure(v)
    assert len(mu) == 1
    assert mu.weights[0] == pytest.approx(1.0)
    assert top_mass_fraction(mu, 1) == 1.0


def test_zero_mass_measure_rejected(full_vector):
    empty = replace(full_vector, coefficients=np.zeros_like(full_vector.coefficients))
    with pytest.raises(MeasureError):
        momentum_measure(empty)


def test_top_mass_fraction(full_vector):
    mu = momentum_measure(full_vector)
    fractions = [top_mass_fraction(mu, j) for j in (1, 2, 5, 50)]
    assert all(a <= b for a, b in zip(fractions, fractions[1:]))
    assert fractions[0] == pytest.approx(float(mu.weights.max()))
    assert top_mass_fraction(mu, len(mu) + 3) == 1.0
    with pytest.raises(ParameterError):
        top_mass_fraction(mu, 0)


def test_direction_mass():
    mu = MomentumMeasure(
        np.array([[1.0, 0.0, 0.0], unit([1.0, -1.0, 0.0]), [0.0, 0.0, 1.0]]),
        np.array([0.2, 0.5, 0.3]),
        True,
    )
    assert direction_mass(mu, (1.0, -1.0, 0.0), 0.1) == pytest.approx(0.5)
    assert direction_mass(mu, (1.0, -1.0, 0.0), math.pi / 4 + 1e-9) == pytest.approx(0.7)
    assert direction_mass(mu, (0.0, 1.0, 0.0), math.pi) == pytest.approx(1.0)
    with pytest.raises(ParameterError):
        direction_mass(mu, (0.0, 0.0, 0.0), 0.1)


def test_measure_expectation():
    mu = MomentumMeasure(np.array([[0.0, 0.0, 1.0], [0.0, 0.0, -1.0]]), np.array([0.75, 0.25]), True)
    assert measure_expectation(Symbol.constant(2.0), mu) == pytest.approx(2.0)
    expected = math.sqrt(3.0 / (4.0 * math.pi)) * (0.75 - 0.25)
    assert measure_expectation(Symbol.fourier_mode((0, 0, 0), 1, 0), mu) == pytest.approx(expected)
    assert measure_expectation(Symbol.fourier_mode((1, 0, 0)), mu) == 0j


def test_op_norm_bound():
    sym = Symbol.constant(1.0) + Symbol.fourier_mode((1, 0, 0), 2, 1, 3.0 - 4.0j)
    expected = math.sqrt(4.0 * math.pi) * math.sqrt(1.0 / (4.0 * math.pi)) + 5.0 * math.sqrt(5.0 / (4.0 * math.pi))
    assert op_norm_bound(sym) == pytest.approx(expected)


def test_truncation_matrix_gap_within_bound(reference_k, spectrum_0_250, full_vector):
    trunc = green_truncated(reference_k, X0, full_vector.lam, full_vector.lam ** (-1.0 / 16.0), spectrum=spectrum_0_250)
    sym = Symbol.fourier_mode((0, 0, 0), 1, 1, 1.0) + Symbol.fourier_mode((0, 1, 0), 0, 0, 0.5)
    record = truncation_matrix_gap(sym, full_vector, trunc)
    assert record["difference"] <= record["bound"] + 1e-12
    assert record["distance"] >= 0.0


def test_symbol_records():
    records = [
        {"zeta": [1, 0, 0], "l": 0, "m": 0, "re": 0.5, "im": 0.0},
        {"zeta": [-1, 0, 0], "l": 0, "m": 0, "re": 0.5},
    ]
    sym = Symbol.from_records(records)
    assert sym.is_real()
    assert sym.N1 == 1.0 and sym.N2 == 0
    assert Symbol.from_records(sym.to_records()).coeffs == sym.coeffs
    assert not Symbol.fourier_mode((1, 0, 0), 0, 0, 1.0).is_real()
    with pytest.raises(ConfigError):
        Symbol.from_records([{"zeta": [1, 0], "l": 0, "m": 0}])
    with pytest.raises(ConfigError):
        Symbol.from_records([{"l": 0, "m": 0}])


@pytest.mark.slow
def test_position_correlations_decay_with_energy(reference_k):
    cfg = ScattererConfig(X0)
    # green_full needs every mode up to default_cutoff(400) = 800
    spectrum = enumerate_window(reference_k, (0.0, 801.0), check_distinct=False)

    def median_modulus(T):
        roots = perturbed_spectrum(reference_k, cfg, (T, 2.0 * T))
        sample = roots[:: max(1, len(roots) // 200)]
        values = [
            abs(position_expectation((1, 0, 0), green_full(reference_k, X0, r.lam, spectrum=spectrum)))
            for r in sample
        ]
        return float(np.median(values))

    Ts = np.array([50.0, 100.0, 200.0])
    medians = np.array([median_modulus(T) for T in Ts])
    assert medians[-1] < medians[0]
    slope = np.polyfit(np.log(Ts), np.log(medians), 1)[0]
    assert slope < 0.0


@pytest.mark.slow
@pytest.mark.parametrize("zeta", [(1, 0, 0), (0, 1, 0), (1, -1, 0)])
def test_narrow_truncations_vanish_between_100_and_200(reference_k, zeta):
    L = 0.49 * nonorthogonality_threshold(reference_k, zeta)
    spectrum = enumerate_window(reference_k, (99.0, 201.0), check_distinct=False)
    sym = Symbol({(zeta, l, m): 1.0 for l in range(5) for m in range(-l, l + 1)})
    checked = 0
    for root in perturbed_spectrum(reference_k, ScattererConfig(X0), (100.0, 200.0)):
        try:
            v = green_truncated(reference_k, X0, root.lam, L, spectrum=spectrum)
        except EmptyTruncationError:
            continue
        assert op_matrix_element(sym, v, v) == 0j
        checked += 1
    assert checked > 0
