"""
Fonctions de Green complètes et tronquées.

Convention de norme : L²(T³, dx) avec la mesure de Lebesgue (volume 8π³), de sorte que
‖G‖² = 8π³ Σ |coefficient|² avec coefficient = -(1/8π³) e^{-i⟨ξ,x₀⟩} / (n - λ).
"""

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from loguru import logger
from scipy import integrate

from ScatterLab.utils.errors import EmptyTruncationError, ParameterError, PoleError
from ScatterLab.utils.io import write_csv, write_json
from ScatterLab.utils.lattice import (
    OrderedSpectrum,
    QuasiMomentum,
    enumerate_window,
)
from ScatterLab.utils.spectral import (
    BLOCK_HALF_WIDTH,
    POLE_TOL,
    ScattererConfig,
    perturbed_spectrum,
    production_cutoff,
    secular_sum,
)

VOLUME = 8.0 * math.pi**3
PREFACTOR = 1.0 / VOLUME
# |coefficient|^2 (n - lambda)^2 times the volume weight of the norm
UNIT_MASS = VOLUME * PREFACTOR**2
DEFAULT_DELTA = 1.0 / 16.0


@dataclass(frozen=True, eq=False)
class GreenVector:
    """
    Coefficients de Fourier d'une fonction de Green sur un ensemble fini de modes.

    `norm_sq` est la norme de Parseval 8π³ Σ |coefficient|² des modes représentés. Pour un
    vecteur complet, la queue n > cutoff est tenue à part : `tail_estimate` (intégrale de
    Weyl) et `tail_bound` (majorant garanti), `total_norm_sq` = norm_sq + tail_estimate.
    """

    lam: float
    k: QuasiMomentum
    x0: tuple
    xi: np.ndarray
    energies: np.ndarray
    coefficients: np.ndarray
    truncation: Optional[float] = None
    cutoff: Optional[float] = None
    tail_estimate: float = 0.0
    tail_bound: float = 0.0
    norm_sq: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(
            self, "norm_sq", VOLUME * float(np.sum(np.abs(self.coefficients) ** 2))
        )
        for arr in (self.xi, self.energies, self.coefficients):
            arr.setflags(write=False)

    def __len__(self) -> int:
        return int(self.energies.shape[0])

    @property
    def total_norm_sq(self) -> float:
        return self.norm_sq + self.tail_estimate

    @property
    def norm(self) -> float:
        return math.sqrt(self.norm_sq)

    @property
    def directions(self) -> np.ndarray:
        shifted = self.xi + self.k.array
        return shifted / np.sqrt(self.energies)[:, None]

    @property
    def keys(self) -> np.ndarray:
        return mode_keys(self.xi)

    def normalized_coefficients(self) -> np.ndarray:
        """Coefficients du vecteur unitaire g = G/‖G‖ sur les modes représentés."""
        return self.coefficients / self.norm


# Offset making every component of xi nonnegative before packing into 21-bit fields
_KEY_OFFSET = 1 << 20


def mode_keys(xi: np.ndarray) -> np.ndarray:
    """Code chaque ξ ∈ ℤ³ (|ξᵢ| < 2²⁰) en un entier int64 unique, pour les appariements."""
    shifted = np.asarray(xi, dtype=np.int64) + _KEY_OFFSET
    return (shifted[:, 0] << 42) | (shifted[:, 1] << 21) | shifted[:, 2]


def vector_distance(v: "GreenVector", w: "GreenVector") -> float:
    """‖v/‖v‖ - w/‖w‖‖ sur la réunion des modes représentés."""
    keys = np.union1d(v.keys, w.keys)
    dense = np.zeros((2, keys.size), dtype=np.complex128)
    for row, vec in enumerate((v, w)):
        dense[row, np.searchsorted(keys, vec.keys)] = vec.normalized_coefficients()
    return math.sqrt(VOLUME) * float(np.linalg.norm(dense[0] - dense[1]))


def _coefficients(xi: np.ndarray, energies: np.ndarray, x0: np.ndarray, lam: float) -> np.ndarray:
    return -PREFACTOR * np.exp(-1j * (xi @ x0)) / (energies - lam)


def _check_pole(energies: np.ndarray, lam: float) -> None:
    if energies.size and np.min(np.abs(energies - lam)) <= POLE_TOL:
        logger.error(f"λ={lam!r} coïncide avec une énergie non perturbée")
        raise PoleError(f"λ={lam!r} est à moins de {POLE_TOL} d'une énergie non perturbée")


def truncation_set(spectrum: OrderedSpectrum, lam: float, L: float) -> OrderedSpectrum:
    """A(λ, L) = {ξ : ||ξ+k|² - λ| < L}, restreint au spectre fourni (éventuellement vide)."""
    if L <= 0.0:
        raise ParameterError(f"L doit être strictement positif, reçu {L}")
    keep = np.abs(spectrum.energies - lam) < L
    return OrderedSpectrum(
        spectrum.xi[keep].copy(), spectrum.energies[keep].copy(), (lam - L, lam + L), spectrum.k
    )


def weyl_tail_estimate(lam: float, cutoff: float) -> float:
    """Queue de Weyl 8π³ Σ_{n > cutoff} |coefficient|² ≈ UNIT_MASS ∫ 2π√t/(t - λ)² dt."""
    value, _ = integrate.quad(
        lambda t: 2.0 * math.pi * math.sqrt(t) / (t - lam) ** 2, cutoff, np.inf, limit=400
    )
    return UNIT_MASS * value


def tail_upper_bound(lam: float, cutoff: float) -> float:
    """
    Majorant garanti de 8π³ Σ_{n > cutoff} |coefficient|².

    Sommation d'Abel avec N(t) ≤ (4/3)π(√t + √3/2)³ (chaque point possède un cube unité
    contenu dans la boule élargie) et f(t) = (t - λ)⁻² décroissante pour t > λ.
    """
    if cutoff <= lam:
        raise ParameterError(f"La coupure {cutoff} doit dépasser λ={lam}")
    value, _ = integrate.quad(
        lambda t: 4.0 / 3.0 * math.pi * (math.sqrt(t) + math.sqrt(3.0) / 2.0) ** 3
        * 2.0
        / (t - lam) ** 3,
        cutoff,
        np.inf,
        limit=400,
    )
    return UNIT_MASS * value


def default_cutoff(lam: float) -> float:
    return max(2.0 * lam, lam + 50.0)


def green_full(
    k: QuasiMomentum,
    x0: Sequence[float],
    lam: float,
    cutoff: Optional[float] = None,
    spectrum: Optional[OrderedSpectrum] = None,
) -> GreenVector:
    """
    Fonction de Green G_λ sur tous les modes n ≤ cutoff, avec estimation et majorant de queue.

    Paramètres
    ----------
    k : QuasiMomentum
        Quasi-impulsion
    x0 : Sequence[float]
        Position du diffuseur
    lam : float
        Énergie λ, hors de 𝒩
    cutoff : float, optionnel
        Coupure en énergie (défaut : max(2λ, λ + 50))
    spectrum : OrderedSpectrum, optionnel
        Spectre déjà énuméré couvrant [0, cutoff], réutilisé tel quel

    Lève
    ----
    PoleError
        Si λ est à moins de 1e-9 d'une énergie
    """
    cutoff = float(cutoff) if cutoff is not None else default_cutoff(lam)
    x0_arr = ScattererConfig(tuple(x0)).array
    if spectrum is None:
        spectrum = enumerate_window(k, (0.0, cutoff), check_distinct=False)
    elif not spectrum.covers(0.0, cutoff):
        raise ParameterError(f"Le spectre fourni {spectrum.window} ne couvre pas [0, {cutoff}]")
    keep = spectrum.energies <= cutoff
    xi, energies = spectrum.xi[keep], spectrum.energies[keep]
    _check_pole(energies, lam)
    vector = GreenVector(
        lam=float(lam),
        k=k,
        x0=tuple(x0_arr),
        xi=xi.copy(),
        energies=energies.copy(),
        coefficients=_coefficients(xi, energies, x0_arr, lam),
        cutoff=cutoff,
        tail_estimate=weyl_tail_estimate(lam, cutoff),
        tail_bound=tail_upper_bound(lam, cutoff),
    )
    logger.debug(
        f"G_λ complet: λ={lam!r}, {len(vector)} modes, ‖G‖²={vector.norm_sq:.6g}, queue={vector.tail_estimate:.3g}"
    )
    return vector


def green_truncated(
    k: QuasiMomentum,
    x0: Sequence[float],
    lam: float,
    L: float,
    spectrum: Optional[OrderedSpectrum] = None,
) -> GreenVector:
    """
    Fonction de Green tronquée G_{λ,L} sur A(λ, L), norme exacte.

    Lève
    ----
    EmptyTruncationError
        Si A(λ, L) est vide
    """
    if L <= 0.0:
        raise ParameterError(f"L doit être strictement positif, reçu {L}")
    x0_arr = ScattererConfig(tuple(x0)).array
    if spectrum is None or not spectrum.covers(max(0.0, lam - L), lam + L):
        spectrum = enumerate_window(k, (max(0.0, lam - L), lam + L), check_distinct=False)
    subset = truncation_set(spectrum, lam, L)
    if len(subset) == 0:
        logger.warning(f"A(λ={lam!r}, L={L:.3g}) est vide")
        raise EmptyTruncationError(f"A(λ={lam!r}, L={L}) est vide")
    _check_pole(subset.energies, lam)
    return GreenVector(
        lam=float(lam),
        k=k,
        x0=tuple(x0_arr),
        xi=subset.xi.copy(),
        energies=subset.energies.copy(),
        coefficients=_coefficients(subset.xi, subset.energies, x0_arr, lam),
        truncation=float(L),
    )


def truncation_error(
    k: QuasiMomentum,
    x0: Sequence[float],
    lam: float,
    L: float,
    cutoff: Optional[float] = None,
    spectrum: Optional[OrderedSpectrum] = None,
) -> float:
    """
    Majorant garanti de ‖g_{λ,L} - g_λ‖.

    Avec a = ‖G_{λ,L}‖², b la masse des modes n ≤ cutoff hors de A(λ, L) et t ≤ tail_bound
    la queue, ‖g_{λ,L} - g_λ‖² = 2 - 2√(a/(a+b+t)), croissant en t : on prend t = tail_bound.
    """
    cutoff = float(cutoff) if cutoff is not None else default_cutoff(lam)
    if spectrum is None:
        spectrum = enumerate_window(k, (0.0, cutoff), check_distinct=False)
    energies = spectrum.energies[spectrum.energies <= cutoff]
    _check_pole(energies, lam)
    weights = UNIT_MASS / (energies - lam) ** 2
    inside = np.abs(energies - lam) < L
    a = float(np.sum(weights[inside]))
    if a == 0.0:
        raise EmptyTruncationError(f"A(λ={lam!r}, L={L}) est vide")
    rest = float(np.sum(weights[~inside])) + tail_upper_bound(lam, cutoff)
    q = rest / (a + rest)
    error = math.sqrt(2.0 * q / (1.0 + math.sqrt(1.0 - q)))
    logger.debug(f"‖g_L - g‖ ≤ {error:.3g} pour λ={lam!r}, L={L:.3g}")
    return error


def chained_error_bound(k: QuasiMomentum, lam: float, L: float, cutoff: float, spectrum: OrderedSpectrum) -> float:
    """2‖G_λ - G_{λ,L}‖/‖G_λ‖ avec la queue majorée, côté droit de l'inégalité de troncature."""
    energies = spectrum.energies[spectrum.energies <= cutoff]
    weights = UNIT_MASS / (energies - lam) ** 2
    inside = np.abs(energies - lam) < L
    rest = float(np.sum(weights[~inside])) + tail_upper_bound(lam, cutoff)
    return 2.0 * math.sqrt(rest / (float(np.sum(weights)) + tail_upper_bound(lam, cutoff)))


def evaluate_green(v: GreenVector, x: np.ndarray) -> np.ndarray:
    """Synthèse ponctuelle Σ coefficient · e^{i⟨ξ,x⟩} en un point (3,) ou un lot (M, 3)."""
    pts = np.atleast_2d(np.asarray(x, dtype=np.float64))
    out = np.empty(pts.shape[0], dtype=np.complex128)
    chunk = max(1, 2_000_000 // max(len(v), 1))
    for start in range(0, pts.shape[0], chunk):
        block = pts[start : start + chunk]
        out[start : start + chunk] = np.exp(1j * (block @ v.xi.T)) @ v.coefficients
    return out[0] if np.ndim(x) == 1 else out


def evaluate_green_grid(v: GreenVector, n: int = 64) -> np.ndarray:
    """
    Valeurs sur la grille uniforme x = 2πj/n de T³ par FFT inverse.

    Lève
    ----
    ParameterError
        Si un mode |ξᵢ| ≥ n/2 se replierait sur la grille
    """
    if len(v) and np.max(np.abs(v.xi)) >= n // 2:
        raise ParameterError(f"Grille {n}³ trop grossière pour max|ξᵢ|={int(np.max(np.abs(v.xi)))}")
    grid = np.zeros((n, n, n), dtype=np.complex128)
    idx = np.mod(v.xi, n)
    np.add.at(grid, (idx[:, 0], idx[:, 1], idx[:, 2]), v.coefficients)
    return np.fft.ifftn(grid) * n**3


def full_mass(k: QuasiMomentum, lams: Sequence[float]) -> np.ndarray:
    """
    Σ_n (n - λ)⁻² sur tout 𝒩 (queue de Weyl comprise), pour chaque λ.

    C'est la dérivée du membre de gauche de l'équation séculaire ; on la lit sur les
    développements locaux partagés par bloc d'énergie.
    """
    lams = np.asarray(lams, dtype=np.float64)
    out = np.empty_like(lams)
    if lams.size == 0:
        return out
    order = np.argsort(lams)
    secular = secular_sum(k, production_cutoff(float(lams.max()) + 1.0))
    start = 0
    while start < order.size:
        lo = lams[order[start]]
        stop = start
        while stop < order.size and lams[order[stop]] - lo <= 2.0 * BLOCK_HALF_WIDTH:
            stop += 1
        hi = lams[order[stop - 1]]
        half = max(0.5 * (hi - lo), 1e-3)
        expansion = secular.local(0.5 * (lo + hi), half)
        out[order[start:stop]] = expansion.derivative(lams[order[start:stop]])
        start = stop
    return out


def large_norm_fraction(
    k: QuasiMomentum, cfg: ScattererConfig, T_grid: Sequence[float], exponent: float = 0.8
) -> list:
    """
    Pour chaque T, fraction des valeurs propres perturbées λ ≤ T telles que
    ‖G_λ‖² ≥ λ^{exponent}·(8π³/64π⁶), soit Σ (n - λ)⁻² ≥ λ^{exponent}.
    """
    T_values = sorted(float(T) for T in T_grid)
    if not T_values:
        return []
    roots = perturbed_spectrum(k, cfg, (0.0, T_values[-1]))
    lams = np.array([r.lam for r in roots if r.lam <= T_values[-1]])
    masses = full_mass(k, lams)
    large = masses >= np.power(np.maximum(lams, 1.0), exponent)
    rows = []
    for T in T_values:
        sel = lams <= T
        fraction = float(large[sel].mean()) if sel.any() else float("nan")
        rows.append({"T": T, "count": int(sel.sum()), "fraction": fraction})
        logger.debug(f"Fraction de grande norme à T={T}: {fraction:.4f}")
    return rows


def export_green_vector(v: GreenVector, path) -> tuple:
    """CSV xi1,xi2,xi3,energy,re_coeff,im_coeff et JSON voisin {lambda, L, norm_sq, tail_bound}."""
    rows = (
        (int(x[0]), int(x[1]), int(x[2]), float(e), float(c.real), float(c.imag))
        for x, e, c in zip(v.xi, v.energies, v.coefficients)
    )
    csv_path = write_csv(path, ("xi1", "xi2", "xi3", "energy", "re_coeff", "im_coeff"), rows)
    sidecar = {
        "lambda": v.lam,
        "L": v.truncation,
        "norm_sq": v.norm_sq,
        "tail_estimate": v.tail_estimate,
        "tail_bound": v.tail_bound,
        "cutoff": v.cutoff,
        "k": list(v.k.k),
        "x0": list(v.x0),
    }
    json_path = write_json(str(csv_path.with_suffix("")) + ".json", sidecar)
    return csv_path, json_path
