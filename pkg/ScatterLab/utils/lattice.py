"""
Spectre du réseau décalé ℤ³ + k.

Énumère les énergies |ξ+k|² dans une fenêtre, fournit les fonctions de comptage N(x) et S(R),
le comptage lissé S_δ(R) (quadrature directe et évaluation duale par sommation de Poisson)
ainsi que l'ajustement de l'exposant du reste de la loi de Weyl.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from scipy import integrate, special

from ScatterLab.utils.errors import (
    CapacityError,
    DegeneracyError,
    FitError,
    ParameterError,
)
from ScatterLab.utils.settings import settings

# Relative tolerance below which two energies are considered equal
DEGENERACY_TOL = 1e-12

# Normalisation of the bump c (1 - |x|^2)^4 on the unit ball: 4 pi c B(3/2, 5) / 2 = 1
BUMP_CONSTANT = 1.0 / (2.0 * math.pi * special.beta(1.5, 5.0))


@dataclass(frozen=True)
class QuasiMomentum:
    """
    Vecteur de Bloch k ∈ ℝ³ et ses métadonnées diophantiennes.

    k est conservé tel que fourni (pas de réduction modulo 1) : les énergies |ξ+k|²
    dépendent du représentant choisi.
    """

    k: Tuple[float, float, float]
    dioph_type: Optional[float] = None
    indep_checked: bool = False

    def __post_init__(self):
        values = tuple(float(c) for c in self.k)
        if len(values) != 3:
            raise ParameterError(f"k doit avoir 3 composantes, reçu {len(values)}")
        if not all(math.isfinite(c) for c in values):
            raise ParameterError(f"Composantes de k non finies: {values}")
        if self.dioph_type is not None and self.dioph_type < 4.0 / 3.0:
            raise ParameterError(
                f"Le type diophantien doit vérifier κ ≥ 4/3, reçu {self.dioph_type}"
            )
        object.__setattr__(self, "k", values)

    @classmethod
    def reference(cls) -> "QuasiMomentum":
        """Quasi-impulsion de référence (1/√2, 1/√3, 1/√5), matérialisée une seule fois."""
        return REFERENCE_K

    @property
    def array(self) -> np.ndarray:
        return np.array(self.k, dtype=np.float64)


REFERENCE_K = QuasiMomentum((1.0 / math.sqrt(2.0), 1.0 / math.sqrt(3.0), 1.0 / math.sqrt(5.0)))


@dataclass(frozen=True)
class LatticeMode:
    xi: Tuple[int, int, int]
    energy: float
    direction: Optional[Tuple[float, float, float]]


@dataclass(frozen=True, eq=False)
class OrderedSpectrum:
    """
    Suite ordonnée 𝒩 des énergies d'une fenêtre [a, b].

    Les tableaux sont en lecture seule ; `xi` a la forme (N, 3) et `energies` la forme (N,).
    """

    xi: np.ndarray
    energies: np.ndarray
    window: Tuple[float, float]
    k: QuasiMomentum
    directions: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        shifted = self.xi + self.k.array
        norms = np.sqrt(self.energies)
        with np.errstate(invalid="ignore", divide="ignore"):
            directions = shifted / norms[:, None]
        directions[norms == 0.0] = np.nan
        for arr in (self.xi, self.energies, directions):
            arr.setflags(write=False)
        object.__setattr__(self, "directions", directions)

    def __len__(self) -> int:
        return int(self.energies.shape[0])

    @property
    def modes(self) -> List[LatticeMode]:
        out = []
        for xi, energy, direction in zip(self.xi, self.energies, self.directions):
            d = None if energy == 0.0 else tuple(float(c) for c in direction)
            out.append(LatticeMode(tuple(int(c) for c in xi), float(energy), d))
        return out

    def covers(self, a: float, b: float) -> bool:
        return self.window[0] <= a and b <= self.window[1]

    def index_of(self, energy: float) -> int:
        """Indice de `energy` dans le spectre, ou -1 si absente (tolérance relative 1e-12)."""
        i = int(np.searchsorted(self.energies, energy))
        for j in (i - 1, i):
            if 0 <= j < len(self) and abs(self.energies[j] - energy) <= DEGENERACY_TOL * max(
                1.0, abs(energy)
            ):
                return j
        return -1

    def restrict(self, a: float, b: float) -> "OrderedSpectrum":
        lo = int(np.searchsorted(self.energies, a, side="left"))
        hi = int(np.searchsorted(self.energies, b, side="right"))
        return OrderedSpectrum(
            self.xi[lo:hi].copy(), self.energies[lo:hi].copy(), (a, b), self.k
        )


def mode_energies(xi: np.ndarray, k: QuasiMomentum) -> np.ndarray:
    """
    Énergies |ξ+k|², toujours évaluées dans le même ordre d'opérations.

    Tous les modules passent par cette fonction afin que la même énergie soit
    reproduite bit à bit partout.
    """
    kk = k.array
    y1 = xi[:, 0] + kk[0]
    y2 = xi[:, 1] + kk[1]
    y3 = xi[:, 2] + kk[2]
    return y1 * y1 + y2 * y2 + y3 * y3


def _expand_intervals(lo: np.ndarray, hi: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Développe des intervalles entiers [lo, hi] en (indice d'intervalle, valeur)."""
    counts = np.maximum(hi - lo + 1, 0)
    total = int(counts.sum())
    owner = np.repeat(np.arange(lo.shape[0]), counts)
    starts = np.cumsum(counts) - counts
    values = np.repeat(lo, counts) + (np.arange(total) - np.repeat(starts, counts))
    return owner, values


def _slab(k: QuasiMomentum, a: float, b: float, x1: int) -> Tuple[np.ndarray, np.ndarray]:
    """Modes de la tranche ξ₁ = x1 dont l'énergie est dans [a, b]."""
    k1, k2, k3 = k.k
    y1 = x1 + k1
    rem = b - y1 * y1
    if rem < 0.0:
        return np.empty((0, 3), dtype=np.int64), np.empty(0)
    r2 = math.sqrt(rem)
    xi2 = np.arange(math.ceil(-k2 - r2) - 1, math.floor(-k2 + r2) + 2, dtype=np.int64)
    y2 = xi2 + k2
    rem2 = rem - y2 * y2
    keep = rem2 >= 0.0
    xi2, y2, rem2 = xi2[keep], y2[keep], rem2[keep]
    outer = np.sqrt(rem2)
    lo_out = np.ceil(-k3 - outer).astype(np.int64) - 1
    hi_out = np.floor(-k3 + outer).astype(np.int64) + 1

    # The inner ball |y| < sqrt(a) leaves a hole in the xi3 column; the padded
    # bounds are cleaned up by the exact energy filter below
    inner2 = a - y1 * y1 - y2 * y2
    has_hole = inner2 > 0.0
    inner = np.sqrt(np.where(has_hole, inner2, 0.0))
    lo_hole = np.floor(-k3 - inner).astype(np.int64) + 1
    hi_hole = np.ceil(-k3 + inner).astype(np.int64) - 1
    split = has_hole & (hi_hole > lo_hole + 1)

    lows = np.concatenate([lo_out, np.where(split, hi_hole, hi_out + 1)])
    highs = np.concatenate([np.where(split, lo_hole, hi_out), hi_out])
    owner, xi3 = _expand_intervals(lows, highs)
    xi2_all = np.concatenate([xi2, xi2])[owner]
    xi = np.empty((xi3.shape[0], 3), dtype=np.int64)
    xi[:, 0] = x1
    xi[:, 1] = xi2_all
    xi[:, 2] = xi3
    energies = mode_energies(xi, k)
    inside = (energies >= a) & (energies <= b)
    return xi[inside], energies[inside]


def _xi1_range(k: QuasiMomentum, b: float) -> range:
    rb = math.sqrt(b)
    return range(math.ceil(-k.k[0] - rb) - 1, math.floor(-k.k[0] + rb) + 2)


def estimated_mode_count(a: float, b: float) -> float:
    """Estimation majorante (Weyl + couche de surface) du nombre de modes dans [a, b]."""
    outer = (math.sqrt(b) + 2.0) ** 3
    inner = max(math.sqrt(a) - 2.0, 0.0) ** 3
    return 4.0 / 3.0 * math.pi * (outer - inner)


def iter_slabs(
    k: QuasiMomentum, a: float, b: float, threads: Optional[int] = None
) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    """
    Itère sur les tranches ξ₁ de la fenêtre [a, b], dans l'ordre croissant de ξ₁.

    Les tranches sont calculées en parallèle (threads) mais toujours restituées dans
    un ordre déterministe. Aucune vérification de capacité : l'appelant peut ainsi
    parcourir en flux des fenêtres qui ne tiendraient pas en mémoire.
    """
    workers = threads or settings.threads
    xs = list(_xi1_range(k, b))
    if workers <= 1:
        for x1 in xs:
            yield _slab(k, a, b, x1)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        yield from pool.map(lambda x1: _slab(k, a, b, x1), xs)


def _check_window(a: float, b: float) -> None:
    if not (math.isfinite(a) and math.isfinite(b)) or a < 0.0 or b < a:
        raise ParameterError(f"Fenêtre d'énergie invalide: [{a}, {b}]")


def enumerate_window(
    k: QuasiMomentum,
    window: Sequence[float],
    check_distinct: bool = True,
    threads: Optional[int] = None,
) -> OrderedSpectrum:
    """
    Énumère tous les modes ξ ∈ ℤ³ d'énergie |ξ+k|² ∈ [a, b], triés par énergie.

    Paramètres
    ----------
    k : QuasiMomentum
        Quasi-impulsion
    window : Sequence[float]
        Fenêtre [a, b] avec 0 ≤ a ≤ b < ∞
    check_distinct : bool
        Si True, deux énergies à moins de 1e-12 (relatif) lèvent DegeneracyError
    threads : int, optionnel
        Nombre de threads (défaut : settings.threads)

    Retourne
    --------
    OrderedSpectrum
        Spectre trié, ordre déterministe (énergie puis ξ lexicographique)

    Lève
    ----
    DegeneracyError
        Si deux énergies coïncident (k rationnellement dépendant)
    CapacityError
        Si la fenêtre dépasse settings.max_modes
    """
    a, b = float(window[0]), float(window[1])
    _check_window(a, b)
    estimate = estimated_mode_count(a, b)
    if estimate > settings.max_modes:
        logger.error(
            f"Fenêtre [{a}, {b}] trop grande: ~{estimate:.3g} modes > budget {settings.max_modes}"
        )
        raise CapacityError(
            f"Fenêtre [{a}, {b}] trop grande: ~{estimate:.3g} modes dépassent le budget de {settings.max_modes}"
        )
    logger.debug(f"Énumération de la fenêtre [{a}, {b}] pour k={k.k}")

    slabs = list(iter_slabs(k, a, b, threads))
    xi = np.concatenate([s[0] for s in slabs]) if slabs else np.empty((0, 3), np.int64)
    energies = np.concatenate([s[1] for s in slabs]) if slabs else np.empty(0)
    order = np.lexsort((xi[:, 2], xi[:, 1], xi[:, 0], energies))
    xi, energies = xi[order], energies[order]

    if check_distinct and energies.shape[0] > 1:
        gaps = np.diff(energies)
        ties = np.nonzero(gaps <= DEGENERACY_TOL * np.maximum(1.0, energies[1:]))[0]
        if ties.size:
            i = int(ties[0])
            logger.error(
                f"Énergies dégénérées: ξ={xi[i].tolist()} et ξ={xi[i + 1].tolist()} à n={energies[i]!r}"
            )
            raise DegeneracyError(
                f"Énergies dégénérées {energies[i]!r} (ξ={xi[i].tolist()}, ξ={xi[i + 1].tolist()}): "
                "k est rationnellement dépendant"
            )

    logger.debug(f"{energies.shape[0]} modes énumérés dans [{a}, {b}]")
    return OrderedSpectrum(xi, energies, (a, b), k)


def energies_upto(k: QuasiMomentum, x: float, threads: Optional[int] = None) -> np.ndarray:
    """Énergies triées (sans vérification de dégénérescence) de la boule |ξ+k|² ≤ x."""
    _check_window(0.0, x)
    if estimated_mode_count(0.0, x) > settings.max_modes:
        raise CapacityError(f"Boule de rayon² {x} trop grande pour le budget mémoire")
    parts = [e for _, e in iter_slabs(k, 0.0, x, threads)]
    return np.sort(np.concatenate(parts)) if parts else np.empty(0)


def counting_N(k: QuasiMomentum, x: float) -> int:
    """N(x) = #{ξ : |ξ+k|² ≤ x}, calculé en flux tranche par tranche."""
    if x < 0.0:
        raise ParameterError(f"x doit être positif, reçu {x}")
    return int(sum(e.shape[0] for _, e in iter_slabs(k, 0.0, x)))


def ball_count_S(k: QuasiMomentum, R: float) -> int:
    """S(R) = N(R²), nombre de points du réseau décalé dans la boule de rayon R."""
    if R < 0.0:
        raise ParameterError(f"R doit être positif, reçu {R}")
    return counting_N(k, R * R)


def weyl_main_term(x: float) -> float:
    return 4.0 / 3.0 * math.pi * x**1.5


def bump(t: np.ndarray) -> np.ndarray:
    """Bosse radiale ψ(t) = c (1 - t²)⁴ sur t < 1, d'intégrale unité sur ℝ³."""
    t = np.asarray(t, dtype=np.float64)
    return np.where(t < 1.0, BUMP_CONSTANT * (1.0 - t * t) ** 4, 0.0)


def _sphere_fraction(s: float, d: float, R: float) -> float:
    """Fraction de la sphère |y| = s contenue dans la boule |y - p| < R, avec |p| = d."""
    if s == 0.0 or d == 0.0:
        return 1.0 if max(s, d) < R else 0.0
    u = (s * s + d * d - R * R) / (2.0 * s * d)
    return min(1.0, max(0.0, 0.5 * (1.0 - u)))


def _smoothed_indicator(d: float, R: float, delta: float) -> float:
    """(χ_B * ψ_δ) en un point à distance d du centre de la boule, par quadrature radiale."""
    if d <= R - delta:
        return 1.0
    if d >= R + delta:
        return 0.0
    kink = abs(d - R) / delta
    points = [kink] if 0.0 < kink < 1.0 else None
    value, _ = integrate.quad(
        lambda t: 4.0 * math.pi * t * t * float(bump(t)) * _sphere_fraction(delta * t, d, R),
        0.0,
        1.0,
        points=points,
        epsabs=1e-12,
        epsrel=1e-10,
        limit=200,
    )
    return value


def smoothed_count(k: QuasiMomentum, R: float, delta: float) -> float:
    """
    Comptage lissé S_δ(R) = Σ_x (χ_B * ψ_δ)(x), B boule de rayon R centrée en -k.

    Les points à distance ≤ R - δ contribuent exactement 1 ; seuls ceux de la couche
    |d - R| < δ nécessitent une quadrature (réduite à une intégrale radiale par symétrie).
    """
    if delta <= 0.0 or R <= 0.0 or delta >= R:
        raise ParameterError(f"Paramètres invalides: R={R}, δ={delta} (il faut 0 < δ < R)")
    inner2 = (R - delta) ** 2
    interior = counting_N(k, inner2)
    shell = enumerate_window(k, (inner2, (R + delta) ** 2), check_distinct=False)
    distances = np.sqrt(shell.energies[shell.energies > inner2])
    total = float(interior) + math.fsum(_smoothed_indicator(float(d), R, delta) for d in distances)
    logger.debug(
        f"S_δ({R}) avec δ={delta}: {interior} points intérieurs, {distances.shape[0]} dans la couche, total {total:.6f}"
    )
    return total


def _bump_transform(omega: float) -> float:
    """Transformée de Fourier (convention e^{-2πi⟨x,ω⟩}) de la bosse radiale, ψ̂(0) = 1."""
    value, _ = integrate.quad(
        lambda r: 4.0 * math.pi * r * r * float(bump(r)) * float(np.sinc(2.0 * omega * r)),
        0.0,
        1.0,
        epsabs=1e-13,
        limit=200,
    )
    return value


def poisson_smoothed_count(k: QuasiMomentum, R: float, delta: float, xi_max: int = 24) -> float:
    """
    Évaluation duale de S_δ(R) par sommation de Poisson, tronquée à |ξ| ≤ xi_max.

    Le terme ξ = 0 donne (4/3)πR³ ; les autres termes utilisent la transformée fermée
    de la boule et la transformée radiale de la bosse.
    """
    if delta <= 0.0 or R <= 0.0:
        raise ParameterError(f"Paramètres invalides: R={R}, δ={delta}")
    n = int(xi_max)
    grid = np.arange(-n, n + 1)
    x1, x2, x3 = np.meshgrid(grid, grid, grid, indexing="ij")
    xi = np.stack([x1.ravel(), x2.ravel(), x3.ravel()], axis=1)
    norm2 = (xi * xi).sum(axis=1)
    xi, norm2 = xi[(norm2 > 0) & (norm2 <= n * n)], norm2[(norm2 > 0) & (norm2 <= n * n)]

    transforms = {int(q): _bump_transform(delta * math.sqrt(q)) for q in np.unique(norm2)}
    rho = np.sqrt(norm2.astype(np.float64))
    arg = 2.0 * math.pi * R * rho
    ball_hat = (np.sin(arg) - arg * np.cos(arg)) / (2.0 * math.pi**2 * rho**3)
    psi_hat = np.array([transforms[int(q)] for q in norm2])
    phase = np.cos(2.0 * math.pi * (xi @ k.array))
    return weyl_main_term(R * R) + float(np.sum(phase * ball_hat * psi_hat))


@dataclass(frozen=True)
class ExponentFit:
    slope: float
    intercept: float
    residual: float
    radii: Tuple[float, ...]
    remainders: Tuple[float, ...]


def remainder_exponent_fit(k: QuasiMomentum, R_grid: Sequence[float]) -> ExponentFit:
    """
    Pente des moindres carrés de log|S(R) - (4/3)πR³| en fonction de log R.

    Les points de reste nul sont exclus ; il faut au moins 3 points exploitables.

    Lève
    ----
    FitError
        Si moins de 3 points sont exploitables
    """
    radii = np.asarray(list(R_grid), dtype=np.float64)
    if radii.size < 8:
        logger.warning(f"Grille de {radii.size} rayons: au moins 8 sont recommandés")
    if radii.size and np.any(np.diff(radii) <= 0.0):
        raise ParameterError("La grille de rayons doit être strictement croissante")

    energies = energies_upto(k, float(radii.max()) ** 2) if radii.size else np.empty(0)
    counts = np.searchsorted(energies, radii * radii, side="right")
    remainders = counts - 4.0 / 3.0 * math.pi * radii**3
    usable = (radii > 0.0) & (remainders != 0.0)
    dropped = int(radii.size - usable.sum())
    if dropped:
        logger.warning(f"{dropped} point(s) exclus de l'ajustement (reste nul ou R = 0)")
    if usable.sum() < 3:
        logger.error(f"Ajustement impossible: {int(usable.sum())} point(s) exploitable(s)")
        raise FitError(
            f"Ajustement impossible: {int(usable.sum())} point(s) exploitable(s), au moins 3 requis"
        )

    x = np.log(radii[usable])
    y = np.log(np.abs(remainders[usable]))
    (slope, intercept), residuals, *_ = np.polyfit(x, y, 1, full=True)
    residual = float(residuals[0]) if residuals.size else 0.0
    logger.success(f"Exposant du reste ajusté: {slope:.4f} (résidu {residual:.3g})")
    return ExponentFit(
        float(slope),
        float(intercept),
        residual,
        tuple(float(r) for r in radii),
        tuple(float(r) for r in remainders),
    )


def weyl_remainder_table(k: QuasiMomentum, x_grid: Sequence[float]) -> List[dict]:
    """Table (x, N(x), terme de Weyl, reste, reste / x^{3/4}) sur une grille d'énergies."""
    xs = np.asarray(list(x_grid), dtype=np.float64)
    if xs.size == 0:
        return []
    energies = energies_upto(k, float(xs.max()))
    counts = np.searchsorted(energies, xs, side="right")
    rows = []
    for x, count in zip(xs, counts):
        main = weyl_main_term(float(x))
        rows.append(
            {
                "x": float(x),
                "N": int(count),
                "weyl": main,
                "remainder": float(count) - main,
                "scaled": (float(count) - main) / x**0.75 if x > 0 else 0.0,
            }
        )
    return rows


def independence_check(k: QuasiMomentum, q_max: int = 20, tol: float = 1e-9) -> QuasiMomentum:
    """
    Recherche heuristique d'une relation entière q₀ + ⟨q, k⟩ ≈ 0 avec |qᵢ| ≤ q_max.

    Retourne une copie de k marquée `indep_checked=True` si aucune relation n'est trouvée.

    Lève
    ----
    DegeneracyError
        Si une relation est trouvée (k rationnellement dépendant à cette échelle)
    """
    grid = np.arange(-q_max, q_max + 1)
    q = np.stack(np.meshgrid(grid, grid, grid, indexing="ij"), axis=-1).reshape(-1, 3)
    q = q[np.any(q != 0, axis=1)]
    s = q @ k.array
    dist = np.abs(s - np.round(s))
    hit = np.nonzero(dist < tol)[0]
    if hit.size:
        rel = q[hit[0]].tolist()
        logger.warning(f"Relation entière trouvée pour k={k.k}: q={rel}, q₀={-int(round(s[hit[0]]))}")
        raise DegeneracyError(f"k={k.k} vérifie une relation entière q={rel}")
    logger.debug(f"Aucune relation entière avec |q| ≤ {q_max} pour k={k.k}")
    return replace(k, indep_checked=True)


def diophantine_exponent_estimate(k: QuasiMomentum, q_max: int = 100_000) -> float:
    """
    Type diophantien empirique : pente de -log e(q) contre log q sur les records
    de e(q) = maxⱼ ‖q kⱼ‖ / q, q ≤ q_max.
    """
    qs = np.arange(1, q_max + 1, dtype=np.float64)
    frac = np.outer(qs, k.array)
    err = np.max(np.abs(frac - np.round(frac)), axis=1) / qs
    records = err < np.minimum.accumulate(np.concatenate([[np.inf], err[:-1]]))
    records &= err > 0.0
    if records.sum() < 3:
        raise FitError("Pas assez de records d'approximation pour estimer le type")
    slope, _ = np.polyfit(np.log(qs[records]), -np.log(err[records]), 1)
    logger.debug(f"Type diophantien empirique pour k={k.k}: {slope:.3f}")
    return float(slope)
