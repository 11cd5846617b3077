import math

import numpy as np
import pytest
from scipy import integrate, special

from ScatterLab.utils.errors import ParameterError, PoleError
from ScatterLab.utils.lattice import QuasiMomentum, enumerate_window
from ScatterLab.utils.spectral import (
    CUTOFF_GRID,
    ScattererConfig,
    SecularSum,
    c0,
    eigenvalue_in_left_gap,
    perturbed_spectrum,
    secular_lhs,
    secular_sum,
    production_cutoff,
    solve_gap,
    taper,
)

ORIGIN = ScattererConfig()


def brute_force_c0(k, box):
    grid = np.arange(-box, box + 1, dtype=np.float64)
    total = 0.0
    for x1 in grid:
        x2, x3 = np.meshgrid(grid, grid, indexing="ij")
        n = (x1 + k.k[0]) ** 2 + (x2 + k.k[1]) ** 2 + (x3 + k.k[2]) ** 2
        total += float(np.sum(1.0 / (n * n + 1.0)))
    return total


def big_box_secular(k, lams, box=300, r_mid=250.0, width=12.0, near_max=2000.0, order=16):
    """
    Regularized secular sum over the box |ξᵢ| ≤ box, damped by the radial weight
    w(r) = erfc((r - r_mid)/width)/2, completed by the Weyl integral of (1 - w).
    Energies above near_max enter through powers of λ/n.
    """
    lams = np.asarray(lams, dtype=np.float64)
    grid = np.arange(-box, box + 1, dtype=np.float64)
    x2, x3 = np.meshgrid(grid, grid, indexing="ij")
    near = []
    moments = np.zeros(order + 1)
    for x1 in grid:
        n = ((x1 + k.k[0]) ** 2 + (x2 + k.k[1]) ** 2 + (x3 + k.k[2]) ** 2).ravel()
        n = n[n <= (box - 1) ** 2]
        w = 0.5 * special.erfc((np.sqrt(n) - r_mid) / width)
        near.append(n[n <= near_max])
        far, wf = n[n > near_max], w[n > near_max]
        moments[0] += float(np.sum(wf / (far * (far * far + 1.0))))
        power = wf / far
        for p in range(1, order + 1):
            power = power / far
            moments[p] += float(np.sum(power))
    near = np.concatenate(near)
    reg = near / (near * near + 1.0)
    direct = np.array([np.sum(1.0 / (near - lam) - reg) for lam in lams])
    out = direct + np.polynomial.polynomial.polyval(lams, moments)

    def continuum(lam):
        g = lambda r: ((lam * r * r + 1.0) / ((r * r - lam) * (r**4 + 1.0))) * 4.0 * math.pi * r * r
        damped, _ = integrate.quad(
            lambda r: 0.5 * special.erfc(-(r - r_mid) / width) * g(r), 150.0, 400.0, epsabs=1e-13, limit=200
        )
        rest, _ = integrate.quad(g, 400.0, np.inf, epsabs=1e-13, limit=200)
        return damped + rest

    return out + np.array([continuum(lam) for lam in lams])


def test_c0_positive_and_origin_term():
    k0 = QuasiMomentum((0.0, 0.0, 0.0))
    value = c0(k0, cutoff=400.0)
    # the ξ = 0 term alone is 1
    assert value > 1.0
    assert c0(QuasiMomentum((0.3, 0.4, 0.45)), cutoff=400.0) > 0.0


@pytest.mark.slow
def test_c0_matches_box_sum(rational_k):
    box = 200
    brute = brute_force_c0(rational_k, box)
    # the box misses the corner region beyond radius 200, bounded by the Weyl tail
    missing = 2.0 * math.pi * 2.0 / math.sqrt(box * box)
    assert c0(rational_k) == pytest.approx(brute, abs=missing)


@pytest.mark.slow
def test_c0_stable_in_cutoff(reference_k):
    assert c0(reference_k, cutoff=1.0e4) == pytest.approx(c0(reference_k), abs=1e-4)


def test_scatterer_config_validation():
    with pytest.raises(ParameterError):
        ScattererConfig(phi=math.pi)
    with pytest.raises(ParameterError):
        ScattererConfig(phi=-math.pi)
    cfg = ScattererConfig(x0=(7.0, -1.0, 0.5))
    assert cfg.x0[0] == pytest.approx(7.0 - 2.0 * math.pi)
    assert cfg.x0[1] == pytest.approx(2.0 * math.pi - 1.0)


def test_secular_lhs_increases_across_a_gap(reference_k):
    spectrum = enumerate_window(reference_k, (0.0, 20.0))
    for j in (3, 40, 100):
        left, right = spectrum.energies[j], spectrum.energies[j + 1]
        width = right - left
        values = [secular_lhs(reference_k, left + t * width) for t in (1e-4, 0.25, 0.5, 0.75, 1.0 - 1e-4)]
        assert all(a < b for a, b in zip(values, values[1:]))
        assert values[0] < -1e3 and values[-1] > 1e3


def test_taper_profile():
    u = np.array([-1.0, 0.0, 0.25, 0.5, 0.75, 1.0, 2.0])
    w = taper(u)
    assert w[0] == w[1] == 1.0
    assert w[-2] == w[-1] == 0.0
    assert w[3] == pytest.approx(0.5)
    assert np.all(np.diff(w) <= 0.0)
    assert w[2] + w[4] == pytest.approx(1.0)


def test_production_cutoff_on_grid():
    assert production_cutoff(0.5) == CUTOFF_GRID
    assert production_cutoff(150.3) == production_cutoff(150.5) == 2.0 * CUTOFF_GRID
    assert production_cutoff(200.0) == 2.0 * CUTOFF_GRID
    assert production_cutoff(200.01) == 3.0 * CUTOFF_GRID


def test_nearby_lambdas_share_one_sum(reference_k):
    secular_lhs(reference_k, 50.3001)
    before = secular_sum.cache_info()
    secular_lhs(reference_k, 50.4001)
    secular_lhs(reference_k, 60.5001)
    after = secular_sum.cache_info()
    assert after.hits == before.hits + 2
    assert after.misses == before.misses


def test_secular_lhs_pole(reference_k):
    e = float(enumerate_window(reference_k, (0.0, 10.0)).energies[5])
    with pytest.raises(PoleError):
        secular_lhs(reference_k, e)


@pytest.mark.slow
def test_secular_lhs_stable_in_cutoff(reference_k):
    lams = (12.3456, 100.0371, 191.27)
    coarse = SecularSum(reference_k, 2.0 * CUTOFF_GRID)
    fine = SecularSum(reference_k, 4.0 * CUTOFF_GRID)
    for lam in lams:
        assert coarse(lam) == pytest.approx(fine(lam), rel=1e-6, abs=1e-6)


@pytest.mark.slow
def test_secular_lhs_matches_big_box_sum(reference_k):
    lams = np.random.default_rng(8).uniform(0.5, 200.0, size=100)
    oracle = big_box_secular(reference_k, lams)
    values = np.array([secular_lhs(reference_k, lam) for lam in lams])
    np.testing.assert_allclose(values, oracle, rtol=1e-4, atol=1e-4)


@pytest.mark.slow
def test_secular_lhs_rational_k_matches_big_box_sum(rational_k):
    (oracle,) = big_box_secular(rational_k, [0.5])
    assert secular_lhs(rational_k, 0.5) == pytest.approx(oracle, rel=1e-4)


def test_secular_expansion_matches_direct_sum(reference_k):
    secular = secular_sum(reference_k, production_cutoff(51.0))
    lams = np.array([12.3456, 30.01, 47.5])
    local = secular.local(30.0, 20.0)
    direct = np.array([secular(l) for l in lams])
    np.testing.assert_allclose(local(lams), direct, rtol=1e-9, atol=1e-9)


def test_phi_zero_roots_solve_unperturbed_equation(reference_k):
    roots = perturbed_spectrum(reference_k, ORIGIN, (0.0, 10.0))
    assert roots
    for r in roots:
        assert r.n_left < r.lam < r.n_right
        assert abs(secular_lhs(reference_k, r.lam)) < 1e-6 or r.resolution_limited


def test_root_count_equals_gap_count(reference_k):
    roots = perturbed_spectrum(reference_k, ORIGIN, (20.0, 30.0))
    spectrum = enumerate_window(reference_k, (0.0, 31.0))
    e = spectrum.energies
    gaps = [j for j in range(len(e) - 1) if e[j + 1] > 20.0 and e[j] < 30.0]
    assert [r.gap_index for r in roots] == gaps
    assert [r.lam for r in roots] == sorted(r.lam for r in roots)


@pytest.mark.slow
def test_every_gap_up_to_500_holds_one_root(reference_k):
    roots = perturbed_spectrum(reference_k, ORIGIN, (0.0, 500.0))
    e = enumerate_window(reference_k, (0.0, 501.0), check_distinct=False).energies
    expected = [j for j in range(len(e) - 1) if e[j + 1] <= 500.0]
    inside = [r for r in roots if r.n_right <= 500.0]
    assert [r.gap_index for r in inside] == expected
    for r in inside:
        assert r.n_left == e[r.gap_index] and r.n_right == e[r.gap_index + 1]
        assert r.n_left < r.lam < r.n_right


def test_window_near_hundred(reference_k):
    roots = perturbed_spectrum(reference_k, ORIGIN, (99.0, 101.0))
    lams = np.array([r.lam for r in roots])
    lefts = np.array([r.n_left for r in roots])
    rights = np.array([r.n_right for r in roots])
    assert np.all((lefts < lams) & (lams < rights))
    np.testing.assert_array_equal(lefts[1:], rights[:-1])
    for quoted in (100.03, 100.05, 100.07, 100.09, 100.11, 100.13):
        assert np.min(np.abs(lams - quoted)) < 0.05


def test_solve_gap_agrees_with_batch_solver(reference_k):
    spectrum = enumerate_window(reference_k, (0.0, 15.0))
    batch = {r.gap_index: r for r in perturbed_spectrum(reference_k, ORIGIN, (0.0, 15.0))}
    for j in (0, 7, 60):
        single = solve_gap(reference_k, ORIGIN, j, spectrum)
        assert single.lam == pytest.approx(batch[j].lam, abs=1e-8)
        assert single.n_left == spectrum.energies[j]


def test_first_gap_matches_dense_scan(reference_k):
    spectrum = enumerate_window(reference_k, (0.0, 5.0))
    root = solve_gap(reference_k, ORIGIN, 0, spectrum)
    left, right = spectrum.energies[0], spectrum.energies[1]
    secular = secular_sum(reference_k, production_cutoff(right))
    grid = np.linspace(left, right, 1_000_002)[1:-1]
    values = secular.local(0.5 * (left + right), 0.5 * (right - left))(grid)
    crossing = grid[int(np.argmax(values > 0.0))]
    assert root.lam == pytest.approx(crossing, abs=max(1e-6, (right - left) / 1e6))


def test_roots_increase_with_phi(reference_k):
    spectrum = enumerate_window(reference_k, (0.0, 10.0))
    lams = [solve_gap(reference_k, ScattererConfig(phi=phi), 12, spectrum).lam for phi in (-2.5, -0.5, 0.0, 0.5, 2.5)]
    assert all(a < b for a, b in zip(lams, lams[1:]))


def test_shifting_phi_moves_every_root_right(reference_k):
    base = perturbed_spectrum(reference_k, ORIGIN, (40.0, 45.0))
    shifted = perturbed_spectrum(reference_k, ScattererConfig(phi=0.5), (40.0, 45.0))
    assert [r.gap_index for r in base] == [r.gap_index for r in shifted]
    assert all(b.lam < s.lam < s.n_right for b, s in zip(base, shifted))


def test_solve_gap_rejects_out_of_range(reference_k):
    spectrum = enumerate_window(reference_k, (0.0, 5.0))
    with pytest.raises(ParameterError):
        solve_gap(reference_k, ORIGIN, len(spectrum) - 1, spectrum)


def test_no_gap_left_of_first_energy(reference_k):
    spectrum = enumerate_window(reference_k, (0.0, 5.0))
    assert eigenvalue_in_left_gap(reference_k, ORIGIN, spectrum, 0) is None
    assert eigenvalue_in_left_gap(reference_k, ORIGIN, spectrum, 1).gap_index == 0
