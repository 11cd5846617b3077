"""
Équation séculaire du diffuseur ponctuel.

Les valeurs propres perturbées λ sont les solutions de

    Σ_ξ ( 1/(|ξ+k|² - λ) - |ξ+k|²/(|ξ+k|⁴ + 1) ) = c₀ tan(φ/2),

une par lacune (n_j, n_{j+1}) du spectre non perturbé. La somme est évaluée exactement
jusqu'à la coupure Λ_cut = max(100 λ, 10⁴) arrondie au multiple de 10⁴ supérieur, puis
atténuée par un raccord C^∞ w(n) entre Λ_cut et 1.5 Λ_cut ; la part manquante (1 - w)
est complétée par l'intégrale de la densité de Weyl 2π√t dt. Le raccord lisse supprime
la fluctuation des points du réseau qu'une coupure franche laisserait dans le résultat.
"""

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from numpy.polynomial import polynomial as P
from scipy import integrate

from ScatterLab.utils.errors import DegeneracyError, ParameterError, PoleError, SolverError
from ScatterLab.utils.lattice import (
    DEGENERACY_TOL,
    OrderedSpectrum,
    QuasiMomentum,
    iter_slabs,
)

POLE_TOL = 1e-9
GAP_FLOOR = 2e-9
C0_CUTOFF = 4.0e4
# Production cutoffs are rounded up to this grid so that nearby λ share one SecularSum
CUTOFF_GRID = 1.0e4
# The smooth taper runs from Λ_cut to TAPER_RATIO·Λ_cut
TAPER_RATIO = 1.5
# Taylor order of the far-field expansions; the expansion ratio never exceeds 1/4
TAYLOR_ORDER = 28
# Half-width of the energy blocks sharing one local expansion
BLOCK_HALF_WIDTH = 0.5


def production_cutoff(lam: float) -> float:
    raw = max(100.0 * abs(lam), CUTOFF_GRID)
    return CUTOFF_GRID * math.ceil(raw / CUTOFF_GRID)


def taper(u: np.ndarray) -> np.ndarray:
    """Raccord C^∞ : 1 pour u ≤ 0, 0 pour u ≥ 1, strictement décroissant entre les deux."""
    u = np.asarray(u, dtype=np.float64)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(u < 1.0, np.exp(-1.0 / np.maximum(1.0 - u, 1e-300)), 0.0)
        b = np.where(u > 0.0, np.exp(-1.0 / np.maximum(u, 1e-300)), 0.0)
    return a / (a + b)


@dataclass(frozen=True)
class ScattererConfig:
    """Position x₀ ∈ [0, 2π)³ du diffuseur et paramètre d'extension φ ∈ (-π, π)."""

    x0: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    phi: float = 0.0

    def __post_init__(self):
        if not (-math.pi < self.phi < math.pi):
            raise ParameterError(f"φ doit être strictement dans (-π, π), reçu {self.phi}")
        x0 = tuple(float(c) % (2.0 * math.pi) for c in self.x0)
        if len(x0) != 3:
            raise ParameterError(f"x₀ doit avoir 3 composantes, reçu {len(x0)}")
        object.__setattr__(self, "x0", x0)

    @property
    def array(self) -> np.ndarray:
        return np.array(self.x0, dtype=np.float64)


@dataclass(frozen=True)
class PerturbedEigenvalue:
    lam: float
    gap_index: int
    residual: float
    n_left: float
    n_right: float
    # True when double precision stopped the bisection before the residual target
    resolution_limited: bool = False


def _weyl_tail(integrand, cutoff: float) -> float:
    """
    ∫_{cutoff}^∞ integrand(t) 2π√t dt, ramenée à [0, 1] par t = cutoff/s² :
    l'intégrande transformée 4π cutoff^{3/2} integrand(cutoff/s²)/s⁴ reste bornée en s = 0.
    """
    scale = 4.0 * math.pi * cutoff**1.5

    def transformed(s: float) -> float:
        return scale * integrand(cutoff / (s * s)) / s**4

    value, _ = integrate.quad(transformed, 0.0, 1.0, epsabs=1e-15, epsrel=1e-13, limit=200)
    return value


def _tapered_tail(integrand, cutoff: float, outer: float) -> float:
    """Part continue ∫ (1 - w(t)) integrand(t) 2π√t dt, w étant le raccord de [cutoff, outer]."""
    width = outer - cutoff

    def ramp(t: float) -> float:
        return (1.0 - float(taper((t - cutoff) / width))) * integrand(t) * 2.0 * math.pi * math.sqrt(t)

    inner, _ = integrate.quad(ramp, cutoff, outer, epsabs=1e-15, epsrel=1e-13, limit=200)
    return inner + _weyl_tail(integrand, outer)


@lru_cache(maxsize=8)
def _c0_cached(k: QuasiMomentum, cutoff: float) -> float:
    partial = 0.0
    for _, energies in iter_slabs(k, 0.0, cutoff):
        partial += float(np.sum(1.0 / (energies * energies + 1.0)))
    tail = _weyl_tail(lambda t: 1.0 / (t * t + 1.0), cutoff)
    return partial + tail


def c0(k: QuasiMomentum, cutoff: float = C0_CUTOFF) -> float:
    """
    c₀ = Σ_ξ 1/(|ξ+k|⁴ + 1), somme exacte jusqu'à la coupure plus la queue de Weyl
    2π∫ t^{1/2}/(t² + 1) dt.
    """
    value = _c0_cached(k, float(cutoff))
    logger.debug(f"c₀(k={k.k}) = {value!r} (coupure {cutoff})")
    return value


def _moments(
    offsets: np.ndarray, center: float, order: int, weights: Optional[np.ndarray] = None
) -> np.ndarray:
    """
    Coefficients de Taylor en (λ - c) de Σ w(n) [1/(n - λ) - n/(n² + 1)] pour n = c + offsets
    (w ≡ 1 sans poids).

    Le terme d'ordre 0 est combiné en (c n + 1)/((n - c)(n² + 1)) pour éviter
    l'annulation entre les deux grandes sommes.
    """
    coefs = np.zeros(order + 1)
    if offsets.size == 0:
        return coefs
    n = offsets + center
    inv = 1.0 / offsets
    w = np.ones_like(offsets) if weights is None else weights
    coefs[0] = float(np.sum(w * (center * n + 1.0) * inv / (n * n + 1.0)))
    power = w * inv
    for p in range(1, order + 1):
        power *= inv
        coefs[p] = float(np.sum(power))
    return coefs


def _tail_moments(center: float, cutoff: float, outer: float, order: int) -> np.ndarray:
    coefs = np.zeros(order + 1)
    coefs[0] = _tapered_tail(
        lambda t: (center * t + 1.0) / ((t - center) * (t * t + 1.0)), cutoff, outer
    )
    for p in range(1, order + 1):
        coefs[p] = _tapered_tail(lambda t, p=p: (t - center) ** (-(p + 1)), cutoff, outer)
    return coefs


class SecularSum:
    """
    Évaluateur du membre de gauche de l'équation séculaire pour une coupure donnée.

    Les énergies n ≤ split = 3 λ_max + 16 sont conservées (triées) et sommées exactement ;
    celles de (split, 1.5 Λ_cut], pondérées par le raccord w, ainsi que la part de Weyl
    ∫ (1 - w) 2π√t dt sont résumées par un développement
    de Taylor autour de c = λ_max/2, valable tant que |λ - c| ≤ (split - c)/4
    (en particulier pour tout λ de [0, λ_max]).
    """

    def __init__(self, k: QuasiMomentum, cutoff: float, order: int = TAYLOR_ORDER):
        self.k = k
        self.cutoff = float(cutoff)
        self.order = order
        self.lambda_max = self.cutoff / 100.0
        self.center = 0.5 * self.lambda_max
        self.split = min(3.0 * self.lambda_max + 16.0, self.cutoff)
        self.outer = TAPER_RATIO * self.cutoff
        logger.info(
            f"Construction de la somme séculaire: k={k.k}, Λ_cut={self.cutoff:g}, "
            f"raccord jusqu'à {self.outer:g}, split={self.split:g}"
        )

        near_parts = []
        far = np.zeros(order + 1)
        width = self.outer - self.cutoff
        for _, energies in iter_slabs(k, 0.0, self.outer):
            inside = energies <= self.split
            near_parts.append(energies[inside])
            outside = energies[~inside]
            if outside.size:
                weights = taper((outside - self.cutoff) / width)
                far += _moments(outside - self.center, self.center, order, weights)
        self.near = np.sort(np.concatenate(near_parts)) if near_parts else np.empty(0)
        self.near.setflags(write=False)
        self.near_reg = self.near / (self.near * self.near + 1.0)
        self.far = far + _tail_moments(self.center, self.cutoff, self.outer, order)
        logger.debug(f"{self.near.size} énergies conservées sous split={self.split:g}")

    def _check_range(self, lam: np.ndarray) -> None:
        if np.any(np.abs(lam - self.center) > 0.25 * (self.split - self.center)):
            raise ParameterError(
                f"λ hors du domaine de validité de la coupure {self.cutoff:g}: {lam.min()}..{lam.max()}"
            )

    def far_field(self, lam: np.ndarray) -> np.ndarray:
        return P.polyval(lam - self.center, self.far)

    def __call__(self, lam: float) -> float:
        """Évaluation directe en un point (somme exacte sur toutes les énergies ≤ split)."""
        lam_arr = np.atleast_1d(np.float64(lam))
        self._check_range(lam_arr)
        i = int(np.searchsorted(self.near, lam))
        nearest = min(
            (abs(self.near[j] - lam) for j in (i - 1, i) if 0 <= j < self.near.size),
            default=np.inf,
        )
        if nearest <= POLE_TOL:
            logger.error(f"λ={lam!r} à {nearest:.3g} d'une énergie non perturbée")
            raise PoleError(f"λ={lam!r} est à {nearest:.3g} d'une énergie non perturbée (pôle)")
        direct = float(np.sum(1.0 / (self.near - lam) - self.near_reg))
        return direct + float(self.far_field(lam_arr)[0])

    def local(self, center: float, half_width: float) -> "LocalExpansion":
        return LocalExpansion(self, center, half_width)


class LocalExpansion:
    """
    Développement local de la somme séculaire sur [c - h, c + h] : les énergies à moins
    de 4h du centre sont sommées exactement, les autres énergies conservées sont résumées
    par leurs moments autour de c.
    """

    def __init__(self, secular: SecularSum, center: float, half_width: float):
        self.secular = secular
        self.center = float(center)
        self.half_width = float(half_width)
        radius = 4.0 * self.half_width
        lo = int(np.searchsorted(secular.near, center - radius, side="left"))
        hi = int(np.searchsorted(secular.near, center + radius, side="right"))
        self.local = secular.near[lo:hi]
        self.local_reg = float(np.sum(secular.near_reg[lo:hi]))
        rest = np.concatenate([secular.near[:lo], secular.near[hi:]])
        self.rest = _moments(rest - self.center, self.center, secular.order)

    def __call__(self, lam: np.ndarray) -> np.ndarray:
        lam = np.atleast_1d(np.asarray(lam, dtype=np.float64))
        direct = np.sum(1.0 / (self.local[None, :] - lam[:, None]), axis=1) - self.local_reg
        return direct + P.polyval(lam - self.center, self.rest) + self.secular.far_field(lam)

    def derivative(self, lam: np.ndarray) -> np.ndarray:
        """Σ_n (n - λ)⁻², dérivée de la somme séculaire en λ."""
        lam = np.atleast_1d(np.asarray(lam, dtype=np.float64))
        direct = np.sum((self.local[None, :] - lam[:, None]) ** -2.0, axis=1)
        smooth = P.polyval(lam - self.center, P.polyder(self.rest + self.secular.far))
        return direct + smooth


@lru_cache(maxsize=4)
def secular_sum(k: QuasiMomentum, cutoff: float) -> SecularSum:
    return SecularSum(k, cutoff)


def secular_lhs(k: QuasiMomentum, lam: float) -> float:
    """
    Membre de gauche régularisé de l'équation séculaire en λ.

    Lève
    ----
    PoleError
        Si λ est à moins de 1e-9 d'une énergie non perturbée
    """
    return secular_sum(k, production_cutoff(lam))(lam)


def _bisect(
    f: LocalExpansion,
    left: np.ndarray,
    right: np.ndarray,
    target: float,
    gap_indices: Sequence[int],
) -> List[Tuple[float, float, bool]]:
    """
    Bissection vectorisée : une racine de f = target par intervalle (left, right).

    S'arrête lorsque l'intervalle est plus petit que 1e-10·max(1, λ) et que le résidu
    est inférieur à 1e-8·(1 + |target|), ou lorsque la précision double ne permet plus
    de couper l'intervalle.
    """
    lo = left + POLE_TOL
    hi = right - POLE_TOL
    f_lo, f_hi = f(lo) - target, f(hi) - target
    bad = np.nonzero(~((f_lo < 0.0) & (f_hi > 0.0)))[0]
    if bad.size:
        i = int(bad[0])
        logger.error(
            f"Pas de changement de signe dans la lacune {gap_indices[i]} "
            f"({left[i]!r}, {right[i]!r}): f={f_lo[i]:.3g}, {f_hi[i]:.3g}"
        )
        raise SolverError(
            f"Pas de changement de signe dans la lacune {gap_indices[i]} ({left[i]!r}, {right[i]!r}): "
            f"f(gauche)={f_lo[i]:.6g}, f(droite)={f_hi[i]:.6g} (erreur de queue numérique ?)"
        )

    res_tol = 1e-8 * (1.0 + abs(target))
    active = np.ones(lo.shape, dtype=bool)
    limited = np.zeros(lo.shape, dtype=bool)
    roots = 0.5 * (lo + hi)
    residual = np.full(lo.shape, np.inf)
    for _ in range(400):
        if not active.any():
            break
        idx = np.nonzero(active)[0]
        mid = 0.5 * (lo[idx] + hi[idx])
        value = f(mid) - target
        roots[idx] = mid
        residual[idx] = value
        below = value < 0.0
        lo[idx] = np.where(below, mid, lo[idx])
        hi[idx] = np.where(below, hi[idx], mid)
        tol = 1e-10 * np.maximum(1.0, mid)
        done = (hi[idx] - lo[idx] <= tol) & (np.abs(value) <= res_tol)
        stuck = np.nextafter(lo[idx], hi[idx]) >= hi[idx]
        limited[idx] = stuck & ~done
        active[idx] = ~(done | stuck)

    return [(float(r), float(v), bool(l)) for r, v, l in zip(roots, residual, limited)]


def _check_gaps(energies: np.ndarray, gaps: np.ndarray) -> None:
    left, right = energies[gaps], energies[gaps + 1]
    ties = np.nonzero(right - left <= DEGENERACY_TOL * np.maximum(1.0, right))[0]
    if ties.size:
        j = int(gaps[ties[0]])
        logger.error(f"Énergies dégénérées dans la lacune {j}: {energies[j]!r}")
        raise DegeneracyError(
            f"Énergies dégénérées {energies[j]!r} et {energies[j + 1]!r} (lacune {j})"
        )


def solve_gap(
    k: QuasiMomentum, cfg: ScattererConfig, gap_index: int, spectrum: OrderedSpectrum
) -> PerturbedEigenvalue:
    """
    Résout l'équation séculaire dans la lacune (n_j, n_{j+1}) du spectre fourni.

    Paramètres
    ----------
    k : QuasiMomentum
        Quasi-impulsion
    cfg : ScattererConfig
        Position du diffuseur et paramètre φ
    gap_index : int
        Indice j de la lacune, relatif au spectre fourni
    spectrum : OrderedSpectrum
        Spectre non perturbé contenant n_j et n_{j+1}

    Retourne
    --------
    PerturbedEigenvalue
        Racine unique dans la lacune ouverte, avec son résidu

    Lève
    ----
    ParameterError
        Si la lacune est plus étroite que 2e-9 ou hors du spectre
    SolverError
        Si aucun changement de signe n'est détecté
    """
    energies = spectrum.energies
    if not 0 <= gap_index < len(spectrum) - 1:
        raise ParameterError(f"Lacune {gap_index} hors du spectre ({len(spectrum)} énergies)")
    _check_gaps(energies, np.array([gap_index]))
    left, right = float(energies[gap_index]), float(energies[gap_index + 1])
    if right - left <= GAP_FLOOR:
        raise ParameterError(f"Lacune {gap_index} trop étroite: {right - left:.3g} ≤ {GAP_FLOOR}")

    target = c0(k) * math.tan(cfg.phi / 2.0)
    secular = secular_sum(k, production_cutoff(right))
    expansion = secular.local(0.5 * (left + right), 0.5 * (right - left))
    ((lam, residual, limited),) = _bisect(
        expansion, np.array([left]), np.array([right]), target, [gap_index]
    )
    logger.debug(f"Lacune {gap_index}: λ={lam!r}, résidu={residual:.3g}")
    return PerturbedEigenvalue(lam, gap_index, residual, left, right, limited)


def _blocks(left: np.ndarray, right: np.ndarray) -> List[Tuple[int, int]]:
    """Regroupe des lacunes consécutives en blocs d'étendue ≤ 2 BLOCK_HALF_WIDTH."""
    blocks = []
    start = 0
    for i in range(1, left.size + 1):
        if i == left.size or right[i] - left[start] > 2.0 * BLOCK_HALF_WIDTH:
            blocks.append((start, i))
            start = i
    return blocks


def perturbed_spectrum(
    k: QuasiMomentum, cfg: ScattererConfig, window: Sequence[float]
) -> List[PerturbedEigenvalue]:
    """
    Une valeur propre perturbée par lacune (n_j, n_{j+1}) intersectant la fenêtre, triées.

    Les indices de lacune sont globaux : n_0 est la plus petite énergie de 𝒩.
    Les lacunes plus étroites que 2e-9 sont ignorées avec un avertissement.
    """
    a, b = float(window[0]), float(window[1])
    if not (0.0 <= a <= b and math.isfinite(b)):
        raise ParameterError(f"Fenêtre invalide: [{a}, {b}]")
    logger.info(f"Spectre perturbé dans [{a}, {b}] pour φ={cfg.phi}")

    secular = secular_sum(k, production_cutoff(b + 1.0))
    energies = secular.near
    target = c0(k) * math.tan(cfg.phi / 2.0)

    first = max(int(np.searchsorted(energies, a, side="right")) - 1, 0)
    last = int(np.searchsorted(energies, b, side="left"))
    gaps = np.arange(first, min(last, energies.size - 1))
    _check_gaps(energies, gaps)
    widths = energies[gaps + 1] - energies[gaps]
    narrow = widths <= GAP_FLOOR
    if narrow.any():
        logger.warning(
            f"{int(narrow.sum())} lacune(s) plus étroite(s) que {GAP_FLOOR} ignorée(s): "
            f"{gaps[narrow].tolist()[:10]}"
        )
    gaps = gaps[~narrow]
    left, right = energies[gaps], energies[gaps + 1]

    results: List[PerturbedEigenvalue] = []
    for start, stop in _blocks(left, right):
        lo, hi = float(left[start]), float(right[stop - 1])
        expansion = secular.local(0.5 * (lo + hi), 0.5 * (hi - lo))
        roots = _bisect(
            expansion, left[start:stop].copy(), right[start:stop].copy(), target, gaps[start:stop]
        )
        for j, (lam, residual, limited) in zip(gaps[start:stop], roots):
            results.append(
                PerturbedEigenvalue(
                    lam, int(j), residual, float(energies[j]), float(energies[j + 1]), limited
                )
            )

    limited_count = sum(r.resolution_limited for r in results)
    if limited_count:
        logger.warning(
            f"{limited_count} racine(s) limitée(s) par la précision double (résidu au-dessus de la cible)"
        )
    logger.success(f"{len(results)} valeurs propres perturbées dans [{a}, {b}]")
    return results


def eigenvalue_in_left_gap(
    k: QuasiMomentum, cfg: ScattererConfig, spectrum: OrderedSpectrum, m_index: int
) -> Optional[PerturbedEigenvalue]:
    """λ_m : racine dans la lacune immédiatement à gauche de n_m (None si m est la première énergie)."""
    if m_index <= 0:
        return None
    return solve_gap(k, cfg, m_index - 1, spectrum)
