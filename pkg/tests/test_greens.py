import json
import math

import numpy as np
import pytest

from ScatterLab.utils.errors import EmptyTruncationError, ParameterError, PoleError
from ScatterLab.utils.greens import (
    UNIT_MASS,
    VOLUME,
    default_cutoff,
    evaluate_green,
    evaluate_green_grid,
    export_green_vector,
    full_mass,
    green_full,
    green_truncated,
    large_norm_fraction,
    chained_error_bound,
    tail_upper_bound,
    truncation_error,
    truncation_set,
    vector_distance,
    weyl_tail_estimate,
)
from ScatterLab.utils.lattice import QuasiMomentum, enumerate_window
from ScatterLab.utils.spectral import ScattererConfig, perturbed_spectrum

X0 = (0.3, 1.1, 2.0)


def midpoint_lambda(spectrum, j):
    return 0.5 * float(spectrum.energies[j] + spectrum.energies[j + 1])


def test_truncation_set_nesting_and_empty(reference_k):
    spectrum = enumerate_window(reference_k, (0.0, 60.0))
    lam = midpoint_lambda(spectrum, 200)
    nearest = float(np.min(np.abs(spectrum.energies - lam)))
    assert len(truncation_set(spectrum, lam, 0.5 * nearest)) == 0
    small = truncation_set(spectrum, lam, 0.2)
    large = truncation_set(spectrum, lam, 0.4)
    assert set(map(tuple, small.xi.tolist())) <= set(map(tuple, large.xi.tolist()))
    assert np.all(np.abs(large.energies - lam) < 0.4)
    with pytest.raises(ParameterError):
        truncation_set(spectrum, lam, 0.0)


def test_truncation_set_size_follows_weyl_density(reference_k):
    spectrum = enumerate_window(reference_k, (95.0, 105.0))
    lam = midpoint_lambda(spectrum, len(spectrum) // 2)
    L = lam ** (-1.0 / 16.0)
    expected = 2.0 * L * 2.0 * math.pi * math.sqrt(lam)
    size = len(truncation_set(spectrum, lam, L))
    assert expected / 3.0 <= size <= 3.0 * expected


def test_green_full_norm_and_tail(reference_k):
    spectrum = enumerate_window(reference_k, (0.0, 40.0))
    lam = midpoint_lambda(spectrum, 300)
    v = green_full(reference_k, X0, lam)
    assert v.cutoff == default_cutoff(lam)
    assert v.norm_sq == pytest.approx(VOLUME * float(np.sum(np.abs(v.coefficients) ** 2)))
    nearest = float(np.min(np.abs(v.energies - lam)))
    assert v.norm_sq >= UNIT_MASS / nearest**2
    assert 0.0 < v.tail_estimate <= v.tail_bound
    assert v.total_norm_sq == pytest.approx(v.norm_sq + v.tail_estimate)
    assert np.all(v.energies <= v.cutoff)


def test_tail_bound_decreases_with_cutoff():
    lam = 50.0
    bounds = [tail_upper_bound(lam, c) for c in (100.0, 200.0, 400.0, 800.0)]
    assert all(a > b for a, b in zip(bounds, bounds[1:]))
    assert weyl_tail_estimate(lam, 400.0) <= tail_upper_bound(lam, 400.0)
    with pytest.raises(ParameterError):
        tail_upper_bound(lam, 40.0)


def test_norm_blows_up_near_a_pole(reference_k):
    spectrum = enumerate_window(reference_k, (0.0, 30.0))
    n = float(spectrum.energies[100])
    s = 1e-4
    v = green_full(reference_k, X0, n - s)
    assert v.norm_sq >= UNIT_MASS / s**2


def test_green_full_rejects_pole(reference_k):
    n = float(enumerate_window(reference_k, (0.0, 10.0)).energies[4])
    with pytest.raises(PoleError):
        green_full(reference_k, X0, n)


def test_green_full_rejects_short_spectrum(reference_k):
    spectrum = enumerate_window(reference_k, (0.0, 30.0))
    with pytest.raises(ParameterError):
        green_full(reference_k, X0, 20.123, spectrum=spectrum)


def test_single_mode_truncation(reference_k):
    spectrum = enumerate_window(reference_k, (0.0, 30.0))
    j = 150
    n = float(spectrum.energies[j])
    gap = min(n - spectrum.energies[j - 1], spectrum.energies[j + 1] - n)
    lam = n - 0.25 * gap
    v = green_truncated(reference_k, X0, lam, 0.5 * gap, spectrum=spectrum)
    assert len(v) == 1
    assert v.xi[0].tolist() == spectrum.xi[j].tolist()
    g = v.normalized_coefficients()
    assert math.sqrt(VOLUME) * abs(g[0]) == pytest.approx(1.0)
    assert evaluate_green(v, np.array(v.x0)) == pytest.approx(-1.0 / VOLUME / (n - lam))


def test_empty_truncation_raises(reference_k):
    spectrum = enumerate_window(reference_k, (0.0, 30.0))
    lam = midpoint_lambda(spectrum, 100)
    gap = float(spectrum.energies[101] - spectrum.energies[100])
    with pytest.raises(EmptyTruncationError):
        green_truncated(reference_k, X0, lam, 0.25 * gap, spectrum=spectrum)


def test_truncated_norm_and_error_bounds(reference_k, spectrum_0_250):
    roots = perturbed_spectrum(reference_k, ScattererConfig(X0), (60.0, 62.0))
    for root in roots[::5]:
        lam = root.lam
        L = lam ** (-1.0 / 16.0)
        full = green_full(reference_k, X0, lam, spectrum=spectrum_0_250)
        trunc = green_truncated(reference_k, X0, lam, L, spectrum=spectrum_0_250)
        assert trunc.norm_sq <= full.norm_sq
        error = truncation_error(reference_k, X0, lam, L, spectrum=spectrum_0_250)
        assert vector_distance(full, trunc) <= error + 1e-12
        chain = chained_error_bound(reference_k, lam, L, full.cutoff, spectrum_0_250)
        assert error <= chain
        assert truncation_error(reference_k, X0, lam, 2.0 * L, spectrum=spectrum_0_250) <= error


def test_truncation_error_with_everything_represented(reference_k, spectrum_0_250):
    lam = midpoint_lambda(spectrum_0_250, 2000)
    cutoff = default_cutoff(lam)
    error = truncation_error(reference_k, X0, lam, 1e6, spectrum=spectrum_0_250)
    full = green_full(reference_k, X0, lam, spectrum=spectrum_0_250)
    tail = tail_upper_bound(lam, cutoff)
    q = tail / (full.norm_sq + tail)
    assert error == pytest.approx(math.sqrt(2.0 * q / (1.0 + math.sqrt(1.0 - q))))


@pytest.mark.slow
def test_truncation_error_trend_decreases(reference_k):
    cfg = ScattererConfig(X0)
    # every root up to 400 needs modes up to default_cutoff(400) = 800
    spectrum = enumerate_window(reference_k, (0.0, 801.0), check_distinct=False)

    def median_error(T):
        roots = perturbed_spectrum(reference_k, cfg, (T, 2.0 * T))
        sample = roots[:: max(1, len(roots) // 200)]
        errors = [
            truncation_error(reference_k, X0, r.lam, r.lam ** (-1.0 / 16.0), spectrum=spectrum) for r in sample
        ]
        return float(np.median(errors))

    Ts = np.array([50.0, 100.0, 200.0])
    medians = np.array([median_error(T) for T in Ts])
    assert medians[-1] < medians[0]
    slope = np.polyfit(np.log(Ts), np.log(medians), 1)[0]
    assert slope < 0.0


def test_parseval_on_fft_grid(reference_k):
    v = green_full(reference_k, X0, 50.01234)
    values = evaluate_green_grid(v, 64)
    assert float(np.mean(np.abs(values) ** 2)) == pytest.approx(v.norm_sq / VOLUME, rel=1e-2)
    point = np.array([2.0 * math.pi * 3 / 64, 2.0 * math.pi * 10 / 64, 2.0 * math.pi * 41 / 64])
    assert evaluate_green(v, point) == pytest.approx(values[3, 10, 41], rel=1e-9, abs=1e-12)


def test_fft_grid_rejects_aliasing(reference_k):
    v = green_full(reference_k, X0, 50.01234)
    with pytest.raises(ParameterError):
        evaluate_green_grid(v, 8)


def test_conjugate_symmetry(reference_k):
    mirrored = QuasiMomentum(tuple(-c for c in reference_k.k))
    lam = 30.000123
    v = green_full(reference_k, X0, lam, cutoff=80.0)
    w = green_full(mirrored, X0, lam, cutoff=80.0)
    x = np.array([[0.1, 0.2, 0.3], [4.0, 1.0, 5.5]])
    np.testing.assert_allclose(np.conj(evaluate_green(v, x)), evaluate_green(w, x), rtol=1e-10, atol=1e-14)


def test_full_mass_matches_represented_mass_plus_tail(reference_k, spectrum_0_250):
    lams = [midpoint_lambda(spectrum_0_250, j) for j in (500, 1200, 3000)]
    masses = full_mass(reference_k, lams)
    for lam, mass in zip(lams, masses):
        v = green_full(reference_k, X0, lam, spectrum=spectrum_0_250)
        assert mass == pytest.approx(v.total_norm_sq / UNIT_MASS, rel=1e-3)


def test_large_norm_fraction_rows(reference_k):
    rows = large_norm_fraction(reference_k, ScattererConfig(X0), [20.0, 10.0])
    assert [r["T"] for r in rows] == [10.0, 20.0]
    assert rows[0]["count"] < rows[1]["count"]
    assert all(0.0 <= r["fraction"] <= 1.0 for r in rows)
    assert large_norm_fraction(reference_k, ScattererConfig(X0), []) == []


def test_export_green_vector(reference_k, tmp_path):
    v = green_full(reference_k, X0, 10.0001, cutoff=60.0)
    csv_path, json_path = export_green_vector(v, tmp_path / "g.csv")
    lines = csv_path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "xi1,xi2,xi3,energy,re_coeff,im_coeff"
    assert len(lines) == len(v) + 1
    sidecar = json.loads(json_path.read_text(encoding="utf-8"))
    assert sidecar["lambda"] == v.lam
    assert sidecar["L"] is None
    assert sidecar["norm_sq"] == pytest.approx(v.norm_sq)
