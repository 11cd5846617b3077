"""
Statistiques du spectre non perturbé : corrélation de paires fenêtrée, compteurs de
lacunes, d'amas et de queues, filtre de localisation et certificats de masse en impulsion.

Les densités (« densité un », « densité ≥ 1 - 3/G ») sont des densités empiriques à T fini,
toujours rapportées avec la valeur de T.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from numpy.polynomial import polynomial as P
from scipy import integrate

from ScatterLab.utils.errors import CoverageError, ParameterError
from ScatterLab.utils.greens import full_mass
from ScatterLab.utils.lattice import OrderedSpectrum
from ScatterLab.utils.spectral import (
    PerturbedEigenvalue,
    ScattererConfig,
    eigenvalue_in_left_gap,
    perturbed_spectrum,
)

# Rows per block in the quadratic reference loop
PAIR_CHUNK = 256
# Energy bins sharing one far-field expansion in the tail sums
TAIL_BIN = 1.0
TAIL_ORDER = 24


@dataclass(frozen=True)
class Window:
    """
    Fenêtre à support compact [lo, hi] : indicatrice si `func` est absent, sinon fonction
    lisse tronquée à son support numérique.
    """

    lo: float
    hi: float
    func: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)) or self.hi < self.lo:
            raise ParameterError(f"Support de fenêtre invalide: [{self.lo}, {self.hi}]")

    @classmethod
    def indicator(cls, lo: float, hi: float) -> "Window":
        return cls(float(lo), float(hi))

    @classmethod
    def symmetric(cls, D: float) -> "Window":
        """Indicatrice paire de [-D, D]."""
        if D < 0.0:
            raise ParameterError(f"D doit être positif, reçu {D}")
        return cls(-float(D), float(D))

    @classmethod
    def zero(cls) -> "Window":
        return cls(0.0, 0.0, lambda x: np.zeros_like(np.asarray(x, dtype=np.float64)))

    @property
    def is_indicator(self) -> bool:
        return self.func is None

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        inside = (x >= self.lo) & (x <= self.hi)
        if self.func is None:
            return inside.astype(np.float64)
        return np.where(inside, self.func(x), 0.0)


@dataclass(frozen=True)
class PairCorrConfig:
    psi1: Window
    psi2: Window
    window_hhat: Window
    T: float

    def __post_init__(self):
        if not self.T > 0.0:
            raise ParameterError(f"T doit être strictement positif, reçu {self.T}")

    @classmethod
    def shell(cls, D: float, T: float) -> "PairCorrConfig":
        """ψ₁ = ψ₂ = 1_{[1/2, 1]}, fenêtre 1_{[-D, D]} : la coquille 𝒩(T) ∖ 𝒩(T/2)."""
        psi = Window.indicator(0.5, 1.0)
        return cls(psi, psi, Window.symmetric(D), float(T))

    @property
    def energy_range(self) -> Tuple[float, float]:
        lo = min(self.psi1.lo, self.psi2.lo)
        hi = max(self.psi1.hi, self.psi2.hi)
        return max(lo, 0.0) * self.T, hi * self.T


@dataclass(frozen=True)
class FilterParams:
    """Seuils du filtre : lacune G, rayon d'amas D, taille d'amas E, queue F (inf autorisé)."""

    G: float
    D: float
    E: float
    F: float

    def __post_init__(self):
        if not self.G >= 1.0:
            raise ParameterError(f"G doit vérifier G ≥ 1, reçu {self.G}")
        if not self.E >= 1.0:
            raise ParameterError(f"E doit vérifier E ≥ 1, reçu {self.E}")
        if not self.D > 0.0:
            raise ParameterError(f"D doit être strictement positif, reçu {self.D}")
        if not self.F > 0.0:
            raise ParameterError(f"F doit être strictement positif, reçu {self.F}")

    def as_dict(self) -> Dict[str, float]:
        return {"G": self.G, "D": self.D, "E": self.E, "F": self.F}


@dataclass(frozen=True, eq=False)
class FilterResult:
    T: float
    params: FilterParams
    retained: np.ndarray
    indices: np.ndarray
    total: int
    removed_gap: int
    removed_cluster: int
    removed_tail: int

    @property
    def density(self) -> float:
        return self.retained.size / self.total if self.total else float("nan")


@dataclass(frozen=True)
class LocalizationCertificate:
    """Décomposition de la masse Σ (n - λ_m)⁻² en atome principal, amas et queue."""

    m: float
    lam: float
    left_gap: float
    top_atom_mass: float
    cluster_mass: float
    cluster_atoms: int
    tail_mass: float
    total_mass: float
    tail_budget: float
    reference_bound: float
    max_cluster_term: float = field(repr=False, default=0.0)

    @property
    def top_fraction(self) -> float:
        return self.top_atom_mass / self.total_mass

    @property
    def top_cluster_fraction(self) -> float:
        """Masse normalisée des E+1 atomes principaux (l'atome m et son amas)."""
        return (self.top_atom_mass + self.cluster_mass) / self.total_mass


def _require(spectrum: OrderedSpectrum, a: float, b: float) -> None:
    if not spectrum.covers(a, b):
        logger.error(f"Spectre {spectrum.window} ne couvre pas [{a}, {b}]")
        raise CoverageError(f"Le spectre couvre {spectrum.window}, il faut [{a}, {b}]")


def _upto(spectrum: OrderedSpectrum, T: float) -> np.ndarray:
    _require(spectrum, 0.0, T)
    return spectrum.energies[: int(np.searchsorted(spectrum.energies, T, side="right"))]


def _candidate_pairs(energies: np.ndarray, cfg: PairCorrConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Paires ordonnées i ≠ j dont l'écart est dans le support de la fenêtre (avec marge)."""
    T = cfg.T
    lo1, hi1 = cfg.psi1.lo * T, cfg.psi1.hi * T
    first = int(np.searchsorted(energies, lo1, side="left"))
    last = int(np.searchsorted(energies, hi1, side="right"))
    reach = max(abs(cfg.window_hhat.lo), abs(cfg.window_hhat.hi)) / math.sqrt(T)
    pad = 1e-9 * (1.0 + reach)
    rows = np.arange(first, last)
    left = np.searchsorted(energies, energies[rows] - reach - pad, side="left")
    right = np.searchsorted(energies, energies[rows] + reach + pad, side="right")
    counts = right - left
    i = np.repeat(rows, counts)
    starts = np.cumsum(counts) - counts
    j = np.repeat(left, counts) + (np.arange(int(counts.sum())) - np.repeat(starts, counts))
    keep = i != j
    return i[keep], j[keep]


def pair_sum(spectrum: OrderedSpectrum, cfg: PairCorrConfig) -> float:
    """Σ_{i≠j} ψ₁(n_i/T) ψ₂(n_j/T) ĥ(√T (n_i - n_j)) par balayage trié des paires locales."""
    _require(spectrum, *cfg.energy_range)
    e = spectrum.energies
    i, j = _candidate_pairs(e, cfg)
    T = cfg.T
    terms = cfg.psi1(e[i] / T) * cfg.psi2(e[j] / T) * cfg.window_hhat(math.sqrt(T) * (e[i] - e[j]))
    return float(np.sum(terms))


def pair_correlation(spectrum: OrderedSpectrum, cfg: PairCorrConfig) -> float:
    """
    R(ψ₁, ψ₂, ĥ, T) = 3/(4π T^{3/2}) Σ_{i≠j} ψ₁(n_i/T) ψ₂(n_j/T) ĥ(√T (n_i - n_j)).

    Lève
    ----
    CoverageError
        Si le spectre ne couvre pas T·supp(ψ)
    """
    value = 3.0 / (4.0 * math.pi * cfg.T**1.5) * pair_sum(spectrum, cfg)
    logger.debug(f"R(T={cfg.T}) = {value!r}")
    return value


def pair_correlation_bruteforce(spectrum: OrderedSpectrum, cfg: PairCorrConfig) -> float:
    """Double boucle de référence sur toutes les paires (i, j), i ≠ j."""
    _require(spectrum, *cfg.energy_range)
    T = cfg.T
    e = spectrum.energies
    w1, w2 = cfg.psi1(e / T), cfg.psi2(e / T)
    rows, cols = np.nonzero(w1)[0], np.nonzero(w2)[0]
    total = 0.0
    for start in range(0, rows.size, PAIR_CHUNK):
        i = rows[start : start + PAIR_CHUNK]
        diff = math.sqrt(T) * (e[i][:, None] - e[cols][None, :])
        block = w1[i][:, None] * w2[cols][None, :] * cfg.window_hhat(diff)
        block[i[:, None] == cols[None, :]] = 0.0
        total += float(np.sum(block))
    return 3.0 / (4.0 * math.pi * T**1.5) * total


def _window_integral(w: Window) -> float:
    if w.hi <= w.lo:
        return 0.0
    if w.is_indicator:
        return w.hi - w.lo
    value, _ = integrate.quad(lambda s: float(w(s)), w.lo, w.hi, limit=200)
    return value


def _radial_integral(p1: Window, p2: Window) -> float:
    lo, hi = max(p1.lo, p2.lo, 0.0), min(p1.hi, p2.hi)
    if hi <= lo:
        return 0.0
    if p1.is_indicator and p2.is_indicator:
        return 0.5 * (hi * hi - lo * lo)
    value, _ = integrate.quad(lambda r: float(p1(r) * p2(r)) * r, lo, hi, limit=200)
    return value


def pc_limit(cfg: PairCorrConfig) -> float:
    """
    Limite 3π (∫ ĥ) (∫₀^∞ ψ₁ψ₂ r dr) ; forme close pour les indicatrices, quadrature sinon.
    """
    return 3.0 * math.pi * _window_integral(cfg.window_hhat) * _radial_integral(cfg.psi1, cfg.psi2)


def gap_excess_count(spectrum: OrderedSpectrum, G: float, T: float) -> int:
    """
    #{n_i ≤ T : n_{i+1} - n_i > G/√n_{i+1}} ; le voisin n_{i+1} du dernier n_i ≤ T peut
    dépasser T et doit figurer dans le spectre.

    Lève
    ----
    CoverageError
        Si le spectre ne contient aucune énergie au-delà de T
    """
    e = _upto(spectrum, T)
    if e.size == spectrum.energies.size:
        logger.error(f"Aucune énergie au-delà de T={T} dans {spectrum.window}")
        raise CoverageError(f"La lacune qui suit la dernière énergie ≤ {T} sort du spectre {spectrum.window}")
    e = spectrum.energies[: e.size + 1]
    right = e[1:]
    return int(np.count_nonzero(np.diff(e) > G / np.sqrt(right)))


def _local_counts(e: np.ndarray, D: float) -> np.ndarray:
    radius = D / np.sqrt(e)
    return np.searchsorted(e, e + radius, side="right") - np.searchsorted(e, e - radius, side="left")


def cluster_excess_count(spectrum: OrderedSpectrum, D: float, E: float, T: float) -> int:
    """#{n ≤ T : |𝒩(T) ∩ [n - D/√n, n + D/√n]| > E + 1}."""
    e = _upto(spectrum, T)
    e = e[e > 0.0]
    if e.size == 0 or D == 0.0:
        return 0
    return int(np.count_nonzero(_local_counts(e, D) > E + 1))


def tail_sums(spectrum: OrderedSpectrum, A: float, T: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Pour chaque m ∈ 𝒩(T) : Σ_{n ∈ 𝒩(T), √m|n - m| > A} (n - m)⁻².

    Les m sont groupés par tranches d'énergie de largeur TAIL_BIN. Dans une tranche
    [a, b] de demi-largeur h, les n à moins de R = max(A/√a, 3h) de la tranche sont sommés
    exactement ; les autres, tous au-delà du seuil, passent par les moments
    Σ (n - c)^{-q} autour du centre c, avec un rapport de convergence ≤ 1/4.

    Retourne (énergies m, sommes).
    """
    e = _upto(spectrum, T)
    e = e[e > 0.0]
    out = np.zeros(e.size)
    if e.size == 0:
        return e, out
    bins = np.floor(e / TAIL_BIN).astype(np.int64)
    starts = np.flatnonzero(np.r_[True, bins[1:] != bins[:-1]])
    stops = np.r_[starts[1:], e.size]
    scale = np.arange(1, TAIL_ORDER + 2, dtype=np.float64)
    for s, t in zip(starts, stops):
        m = e[s:t]
        a, b = float(m[0]), float(m[-1])
        c, h = 0.5 * (a + b), 0.5 * (b - a)
        R = max(A / math.sqrt(a), 3.0 * h)
        lo = int(np.searchsorted(e, a - R, side="left"))
        hi = int(np.searchsorted(e, b + R, side="right"))

        diff = e[lo:hi][None, :] - m[:, None]
        near = np.sqrt(m)[:, None] * np.abs(diff) > A
        with np.errstate(divide="ignore"):
            out[s:t] = np.sum(np.where(near, diff**-2.0, 0.0), axis=1)

        rest = np.concatenate([e[:lo], e[hi:]])
        if rest.size:
            inv = 1.0 / (rest - c)
            power = inv * inv
            moments = np.empty(TAIL_ORDER + 1)
            for p in range(TAIL_ORDER + 1):
                moments[p] = float(np.sum(power))
                power *= inv
            out[s:t] += P.polyval(m - c, scale * moments)
    return e, out


def tail_sum(spectrum: OrderedSpectrum, m: float, A: float, T: float) -> float:
    """
    Σ_{n ∈ 𝒩(T), √m|n - m| > A} (n - m)⁻², sans la normalisation par m.

    Lève
    ----
    ParameterError
        Si m n'est pas une énergie du spectre
    """
    e = _upto(spectrum, T)
    if spectrum.index_of(m) < 0:
        raise ParameterError(f"m={m!r} n'est pas une énergie du spectre")
    m = float(spectrum.energies[spectrum.index_of(m)])
    diff = e - m
    far = math.sqrt(m) * np.abs(diff) > A
    return float(np.sum(diff[far] ** -2.0))


def tail_aggregate(
    spectrum: OrderedSpectrum, A: float, T: float, tails: Optional[Tuple[np.ndarray, np.ndarray]] = None
) -> Dict[str, float]:
    """Σ_m tail_sum(m)/m et la constante C = Σ · A^{1/3}/T^{3/2} ; `tails` réutilise tail_sums(A, T)."""
    m, sums = tail_sums(spectrum, A, T) if tails is None else tails
    total = float(np.sum(sums / m))
    return {"A": A, "T": T, "sum": total, "C": total * A ** (1.0 / 3.0) / T**1.5}


def shell_counts(spectrum: OrderedSpectrum, T: float) -> np.ndarray:
    """M(j) = #{n ∈ 𝒩(T) : n^{3/2} ∈ [j, j+1)} pour j = 0 .. ⌊T^{3/2}⌋."""
    e = _upto(spectrum, T)
    counts = np.bincount(np.floor(e**1.5).astype(np.int64), minlength=int(math.floor(T**1.5)) + 1)
    logger.debug(f"Σ M(j)² = {int(np.sum(counts.astype(np.int64) ** 2))} à T={T}")
    return counts


def shell_second_moment(counts: np.ndarray, T: float) -> Dict[str, float]:
    second = float(np.sum(np.asarray(counts, dtype=np.float64) ** 2))
    return {"T": T, "second_moment": second, "C": second / T**1.5}


def select_filter_params(
    spectrum: OrderedSpectrum,
    G: float,
    D: float,
    T: float,
    tails: Optional[Tuple[np.ndarray, np.ndarray]] = None,
) -> FilterParams:
    """
    Choix canonique de (E, F) pour G et D donnés, chaque étape retirant au plus T^{3/2}/G points :
    E est le plus petit entier ≥ 1 tel que cluster_excess_count ≤ T^{3/2}/G, F le plus petit
    seuil (percentile des tail_sum(m, D, T)/m) laissant au plus T^{3/2}/G dépassements.
    `tails` réutilise un résultat de tail_sums(spectrum, D, T) déjà calculé.
    """
    budget = int(math.floor(T**1.5 / G))
    e = _upto(spectrum, T)
    e = e[e > 0.0]
    counts = np.sort(_local_counts(e, D))[::-1]
    # the budget-th largest local count c gives E + 1 = c
    E = max(1, int(counts[budget]) - 1) if budget < counts.size else 1

    m, sums = tail_sums(spectrum, D, T) if tails is None else tails
    ratios = np.sort(sums / m)[::-1]
    F = float(ratios[budget]) if budget < ratios.size else 0.0
    F = max(F, np.finfo(np.float64).tiny)
    params = FilterParams(float(G), float(D), float(E), F)
    logger.info(f"Paramètres du filtre à T={T}: G={G}, D={D}, E={E}, F={F:.6g} (budget {budget})")
    return params


def localization_filter(
    spectrum: OrderedSpectrum,
    params: FilterParams,
    T: float,
    tails: Optional[Tuple[np.ndarray, np.ndarray]] = None,
) -> FilterResult:
    """
    Retire de 𝒩(T) les m (i) de lacune gauche > G/√m, (ii) ayant plus de E+1 voisins à
    moins de D/√m, (iii) de queue tail_sum(m, D, T) > F·m. La plus petite énergie, sans
    voisin gauche, n'est jamais retenue. `tails` réutilise tail_sums(spectrum, D, T).
    """
    e = _upto(spectrum, T)
    total = int(e.size)
    candidates = np.ones(total, dtype=bool)
    if total:
        candidates[0] = False
    positive = e > 0.0

    gap = np.zeros(total, dtype=bool)
    if total > 1:
        gap[1:] = np.diff(e) > params.G / np.sqrt(e[1:])

    cluster = np.zeros(total, dtype=bool)
    cluster[positive] = _local_counts(e[positive], params.D) > params.E + 1

    tail = np.zeros(total, dtype=bool)
    if math.isfinite(params.F):
        m, sums = tail_sums(spectrum, params.D, T) if tails is None else tails
        tail[positive] = sums > params.F * m

    keep = candidates & positive & ~gap & ~cluster & ~tail
    result = FilterResult(
        T=float(T),
        params=params,
        retained=e[keep].copy(),
        indices=np.nonzero(keep)[0],
        total=total,
        removed_gap=int(np.count_nonzero(gap)),
        removed_cluster=int(np.count_nonzero(cluster)),
        removed_tail=int(np.count_nonzero(tail)),
    )
    logger.success(
        f"Filtre à T={T}: {result.retained.size}/{total} retenus (densité {result.density:.4f}); "
        f"retirés: lacune {result.removed_gap}, amas {result.removed_cluster}, queue {result.removed_tail}"
    )
    return result


def localized_measure_certificate(
    spectrum: OrderedSpectrum,
    cfg: ScattererConfig,
    m: float,
    params: FilterParams,
    eigenvalue: Optional[PerturbedEigenvalue] = None,
    total_mass: Optional[float] = None,
) -> LocalizationCertificate:
    """
    Décompose la masse non normalisée Σ_{n ∈ 𝒩} (n - λ_m)⁻² de G_{λ_m}, λ_m étant la racine
    de l'équation séculaire dans la lacune immédiatement à gauche de m : atome n = m, amas
    0 < |n - m| < D/√m, queue |n - m| ≥ D/√m (queue de Weyl au-delà du spectre comprise).
    `total_mass`, s'il est fourni, est la masse complète Σ (n - λ_m)⁻² déjà évaluée.

    Lève
    ----
    ParameterError
        Si m n'est pas une énergie du spectre ou n'a pas de voisin gauche
    CoverageError
        Si le spectre ne couvre pas [m - D/√m, m + D/√m]
    """
    idx = spectrum.index_of(m)
    if idx < 1:
        raise ParameterError(f"m={m!r} absent du spectre ou sans voisin gauche")
    m = float(spectrum.energies[idx])
    radius = params.D / math.sqrt(m)
    _require(spectrum, max(spectrum.window[0], m - radius), m + radius)
    if eigenvalue is None:
        eigenvalue = eigenvalue_in_left_gap(spectrum.k, cfg, spectrum, idx)
    lam = eigenvalue.lam

    e = spectrum.energies
    lo = int(np.searchsorted(e, m - radius, side="right"))
    hi = int(np.searchsorted(e, m + radius, side="left"))
    neighbours = np.concatenate([e[lo:idx], e[idx + 1 : hi]])
    cluster_terms = (neighbours - lam) ** -2.0
    top = (m - lam) ** -2.0
    cluster = float(np.sum(cluster_terms))
    total = float(full_mass(spectrum.k, [lam])[0]) if total_mass is None else float(total_mass)
    tail = total - top - cluster

    max_cluster = float(cluster_terms.max()) if cluster_terms.size else 0.0
    head = m / params.G**2
    budget = params.F * m
    reference = head / (head + params.E * max_cluster + budget) if math.isfinite(budget) else 0.0
    return LocalizationCertificate(
        m=m,
        lam=lam,
        left_gap=m - float(e[idx - 1]),
        top_atom_mass=top,
        cluster_mass=cluster,
        cluster_atoms=int(neighbours.size),
        tail_mass=tail,
        total_mass=total,
        tail_budget=budget,
        reference_bound=reference,
        max_cluster_term=max_cluster,
    )


def certify_retained(
    spectrum: OrderedSpectrum, cfg: ScattererConfig, result: FilterResult
) -> List[LocalizationCertificate]:
    """Certificats de tous les m retenus : une seule résolution séculaire sur [0, T] et une seule évaluation groupée des masses."""
    if spectrum.window[0] != 0.0:
        raise CoverageError("Les certificats groupés exigent un spectre commençant à 0")
    roots = {r.gap_index: r for r in perturbed_spectrum(spectrum.k, cfg, (0.0, result.T))}
    pending = []
    for idx, m in zip(result.indices, result.retained):
        root = roots.get(int(idx) - 1)
        if root is None:
            logger.warning(f"Pas de racine dans la lacune à gauche de m={m!r}, certificat ignoré")
            continue
        pending.append((float(m), root))
    # one batched evaluation of Σ (n - λ)⁻² for every retained λ_m
    masses = full_mass(spectrum.k, [root.lam for _, root in pending])
    certificates = [
        localized_measure_certificate(spectrum, cfg, m, result.params, eigenvalue=root, total_mass=mass)
        for (m, root), mass in zip(pending, masses)
    ]
    if certificates:
        worst = min(c.top_cluster_fraction for c in certificates)
        logger.success(
            f"{len(certificates)} certificats à T={result.T}; masse normalisée minimale des E+1 atomes: {worst:.4g}"
        )
    return certificates


def spacing_distribution(spectrum: OrderedSpectrum, T: float, bins: int = 40, s_max: float = 4.0) -> dict:
    """
    Histogramme des espacements dépliés sᵢ = (n_{i+1} - n_i)·2π√n_i sur 𝒩(T), comparé à la
    loi de Poisson e^{-s}.
    """
    e = _upto(spectrum, T)
    if e.size < 2:
        raise CoverageError(f"Pas assez d'énergies sous T={T} pour des espacements")
    spacings = np.diff(e) * 2.0 * math.pi * np.sqrt(e[:-1])
    density, edges = np.histogram(spacings, bins=bins, range=(0.0, s_max), density=True)
    centers = 0.5 * (edges[1:] + edges[:-1])
    return {
        "T": T,
        "count": int(spacings.size),
        "mean": float(np.mean(spacings)),
        "edges": edges.tolist(),
        "density": density.tolist(),
        "poisson": np.exp(-centers).tolist(),
    }
