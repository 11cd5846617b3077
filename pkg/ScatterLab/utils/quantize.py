"""
Quantification Op(a) des symboles polynomiaux finis

    a(x, ξ) = Σ â(ζ, l, m) e^{i⟨ζ,x⟩} Y_{l,m}(ξ/|ξ|),

éléments de matrice sur les vecteurs de Green, et mesures en impulsion.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, Mapping, Tuple

import numpy as np
from loguru import logger

from ScatterLab.utils.errors import ConfigError, MeasureError, NormalizationError, ParameterError
from ScatterLab.utils.greens import VOLUME, GreenVector, mode_keys, vector_distance
from ScatterLab.utils.lattice import QuasiMomentum

UNIT_TOL = 1e-9

SymbolKey = Tuple[Tuple[int, int, int], int, int]


@dataclass(frozen=True)
class SphericalHarmonicIndex:
    l: int
    m: int

    def __post_init__(self):
        if self.l < 0 or abs(self.m) > self.l:
            raise ParameterError(f"Indice d'harmonique invalide (l={self.l}, m={self.m})")

    @property
    def flat(self) -> int:
        """Position dans une table ordonnée (0,0), (1,-1), (1,0), (1,1), ..."""
        return self.l * self.l + self.l + self.m


class AssocLegendre:
    """
    Fonctions de Legendre associées normalisées P̄_l^m(cos θ), m ≥ 0, par récurrence stable
    en l à m fixé ; Y_{l,m} = (-1)^m P̄_l^m(cos θ) e^{imφ} est alors orthonormée sur S².
    """

    def __init__(self, lmax: int):
        self.lmax = lmax
        self.a, self.b = self._compute_ab(lmax)

    @staticmethod
    def _amm(m: int) -> float:
        a = 1.0
        for j in range(1, m + 1):
            a *= (2 * j + 1) / (2 * j)
        return math.sqrt(a / (4.0 * math.pi))

    @staticmethod
    def _compute_ab(lmax: int) -> Tuple[np.ndarray, np.ndarray]:
        a = np.zeros((lmax + 1, lmax + 1))
        b = np.zeros((lmax + 1, lmax + 1))
        for m in range(lmax + 1):
            a[m, m] = AssocLegendre._amm(m)
            for l in range(m + 1, lmax + 1):
                a[l, m] = math.sqrt((4 * l * l - 1) / (l * l - m * m))
                b[l, m] = -math.sqrt(
                    (2 * l + 1) * ((l - 1) * (l - 1) - m * m) / ((2 * l - 3) * (l * l - m * m))
                )
        return a, b

    def evaluate(self, cos_theta: np.ndarray, sin_theta: np.ndarray) -> np.ndarray:
        """Table (lmax+1, lmax+1, M) de P̄_l^m ; les entrées m > l sont nulles."""
        out = np.zeros((self.lmax + 1, self.lmax + 1) + cos_theta.shape)
        sin_power = np.ones_like(cos_theta)
        for m in range(self.lmax + 1):
            out[m, m] = self.a[m, m] * sin_power
            if m + 1 <= self.lmax:
                out[m + 1, m] = self.a[m + 1, m] * cos_theta * out[m, m]
            for l in range(m + 2, self.lmax + 1):
                out[l, m] = self.a[l, m] * cos_theta * out[l - 1, m] + self.b[l, m] * out[l - 2, m]
            sin_power = sin_power * sin_theta
        return out


def _check_unit(directions: np.ndarray) -> None:
    norms = np.linalg.norm(directions, axis=-1)
    bad = np.abs(norms - 1.0) > UNIT_TOL
    if np.any(bad):
        logger.error(f"Direction non unitaire: |d|={norms[bad].flat[0]!r}")
        raise NormalizationError(f"Direction non unitaire: |d|={norms[bad].flat[0]!r}")


def harmonics(lmax: int, directions: np.ndarray) -> np.ndarray:
    """
    Table des Y_{l,m} complexes (Condon–Shortley) aux directions données.

    Retourne un tableau ((lmax+1)², M) indexé par SphericalHarmonicIndex.flat.
    """
    d = np.atleast_2d(np.asarray(directions, dtype=np.float64))
    _check_unit(d)
    x, y, z = d[:, 0], d[:, 1], d[:, 2]
    rho = np.hypot(x, y)
    with np.errstate(invalid="ignore", divide="ignore"):
        phase = np.where(rho > 0.0, (x + 1j * y) / rho, 1.0 + 0j)
    legendre = AssocLegendre(lmax).evaluate(z, rho)
    table = np.zeros(((lmax + 1) ** 2, d.shape[0]), dtype=np.complex128)
    phase_power = np.ones(d.shape[0], dtype=np.complex128)
    for m in range(lmax + 1):
        sign = -1.0 if m % 2 else 1.0
        for l in range(m, lmax + 1):
            positive = sign * legendre[l, m] * phase_power
            table[l * l + l + m] = positive
            if m:
                table[l * l + l - m] = sign * np.conj(positive)
        phase_power = phase_power * phase
    return table


def ylm(idx: SphericalHarmonicIndex, direction) -> complex:
    """
    Harmonique sphérique complexe orthonormée Y_{l,m} en une direction unitaire.

    Lève
    ----
    NormalizationError
        Si |direction| s'écarte de 1 de plus de 1e-9
    """
    return complex(harmonics(idx.l, np.asarray(direction, dtype=np.float64))[idx.flat, 0])


@dataclass(frozen=True, eq=False)
class Symbol:
    """
    Symbole polynomial fini : coefficients â(ζ, l, m) indexés par ((ζ₁, ζ₂, ζ₃), l, m).
    """

    coeffs: Mapping[SymbolKey, complex]
    N1: float = field(init=False)
    N2: int = field(init=False)

    def __post_init__(self):
        clean: Dict[SymbolKey, complex] = {}
        for (zeta, l, m), value in self.coeffs.items():
            zeta = tuple(int(c) for c in zeta)
            if len(zeta) != 3:
                raise ConfigError(f"ζ doit avoir 3 composantes entières, reçu {zeta}")
            SphericalHarmonicIndex(int(l), int(m))
            key = (zeta, int(l), int(m))
            clean[key] = clean.get(key, 0j) + complex(value)
        object.__setattr__(self, "coeffs", clean)
        object.__setattr__(
            self, "N1", max((math.sqrt(sum(c * c for c in z)) for z, _, _ in clean), default=0.0)
        )
        object.__setattr__(self, "N2", max((l for _, l, _ in clean), default=0))

    @classmethod
    def constant(cls, value: complex = 1.0) -> "Symbol":
        """a ≡ value, soit â(0, 0, 0) = √(4π)·value."""
        return cls({((0, 0, 0), 0, 0): math.sqrt(4.0 * math.pi) * value})

    @classmethod
    def fourier_mode(cls, zeta, l: int = 0, m: int = 0, coefficient: complex = 1.0) -> "Symbol":
        return cls({(tuple(zeta), l, m): coefficient})

    @classmethod
    def from_records(cls, records: Iterable[Mapping]) -> "Symbol":
        """Construit un symbole depuis la liste JSON {"zeta", "l", "m", "re", "im"}."""
        coeffs: Dict[SymbolKey, complex] = {}
        for i, rec in enumerate(records):
            try:
                key = (tuple(int(c) for c in rec["zeta"]), int(rec["l"]), int(rec["m"]))
                value = complex(float(rec.get("re", 0.0)), float(rec.get("im", 0.0)))
            except (KeyError, TypeError, ValueError) as e:
                logger.error(f"Entrée de symbole {i} invalide: {rec}")
                raise ConfigError(f"Entrée de symbole {i} invalide: {rec}") from e
            coeffs[key] = coeffs.get(key, 0j) + value
        return cls(coeffs)

    def to_records(self) -> list:
        return [
            {"zeta": list(z), "l": l, "m": m, "re": v.real, "im": v.imag}
            for (z, l, m), v in sorted(self.coeffs.items())
        ]

    def __add__(self, other: "Symbol") -> "Symbol":
        merged = dict(self.coeffs)
        for key, value in other.coeffs.items():
            merged[key] = merged.get(key, 0j) + value
        return Symbol(merged)

    def components(self) -> Iterable["Symbol"]:
        for key, value in self.coeffs.items():
            yield Symbol({key: value})

    def is_real(self, tol: float = 1e-12) -> bool:
        """a réel ⟺ â(-ζ, l, -m) = (-1)^m conj(â(ζ, l, m)) pour tout (ζ, l, m)."""
        for (zeta, l, m), value in self.coeffs.items():
            mirror = self.coeffs.get((tuple(-c for c in zeta), l, -m), 0j)
            expected = (-1) ** (m % 2) * np.conj(value)
            if abs(mirror - expected) > tol * max(1.0, abs(value)):
                return False
        return True


@dataclass(frozen=True, eq=False)
class MomentumMeasure:
    """Mesure atomique sur S² : directions (M, 3) et poids (M,) positifs."""

    directions: np.ndarray
    weights: np.ndarray
    normalized: bool

    def __len__(self) -> int:
        return int(self.weights.shape[0])

    @property
    def total_mass(self) -> float:
        return float(np.sum(self.weights))

    def angles(self) -> Tuple[np.ndarray, np.ndarray]:
        """θ angle polaire depuis +z, φ azimut depuis +x dans [0, 2π)."""
        d = self.directions
        theta = np.arccos(np.clip(d[:, 2], -1.0, 1.0))
        phi = np.mod(np.arctan2(d[:, 1], d[:, 0]), 2.0 * math.pi)
        return theta, phi


def nonorthogonality_threshold(k: QuasiMomentum, zeta) -> float:
    """
    ε(ζ) = ‖2⟨k, ζ⟩‖, distance à l'entier le plus proche.

    Comme 2⟨ξ, ζ⟩ + |ζ|² est entier, |2⟨ξ+k, ζ⟩ + |ζ|²| ≥ ε(ζ) pour tout ξ ∈ ℤ³.
    """
    zeta = np.asarray(zeta, dtype=np.int64)
    if not zeta.any():
        raise ParameterError("ζ doit être non nul")
    t = 2.0 * float(np.dot(k.array, zeta))
    return abs(t - round(t))


def vanishing_guaranteed(k: QuasiMomentum, zeta, L: float) -> bool:
    """
    True si aucune paire (ξ, ξ+ζ) ne peut tenir dans A(λ, L), quel que soit λ.

    Deux énergies à moins de L de λ diffèrent de moins de 2L, et les énergies de ξ et
    ξ+ζ diffèrent d'au moins ε(ζ) : il suffit que 2L ≤ ε(ζ).
    """
    return 2.0 * L <= nonorthogonality_threshold(k, zeta)


def _check_compatible(v: GreenVector, w: GreenVector) -> None:
    if v.k.k != w.k.k or not np.allclose(v.x0, w.x0, rtol=0.0, atol=1e-15):
        logger.error(f"Vecteurs incompatibles: k={v.k.k}/{w.k.k}, x₀={v.x0}/{w.x0}")
        raise ConfigError(
            f"Les vecteurs doivent partager k et x₀ (k={v.k.k} vs {w.k.k}, x₀={v.x0} vs {w.x0})"
        )


def _pairs(v: GreenVector, w: GreenVector, zeta) -> Tuple[np.ndarray, np.ndarray]:
    """Indices (i, j) avec ξ_j(w) = ξ_i(v) + ζ ; les paires hors des deux vecteurs sont sautées."""
    w_keys = w.keys
    order = np.argsort(w_keys)
    sorted_keys = w_keys[order]
    targets = mode_keys(v.xi + np.asarray(zeta, dtype=np.int64))
    pos = np.searchsorted(sorted_keys, targets)
    pos = np.minimum(pos, max(sorted_keys.size - 1, 0))
    hit = sorted_keys.size > 0
    found = (sorted_keys[pos] == targets) if hit else np.zeros(len(v), dtype=bool)
    return np.nonzero(found)[0], order[pos[found]]


def op_matrix_element(sym: Symbol, v: GreenVector, w: GreenVector) -> complex:
    """
    ⟨Op(a) g_v, g_w⟩ sur les vecteurs unitaires g = G/‖G‖ des modes représentés :

        8π³ Σ_{(ζ,l,m)} â(ζ,l,m) Σ_ξ Y_{l,m}(ξ̄) g_v(ξ) conj(g_w(ξ+ζ)).

    Une composante sans paire (ξ, ξ+ζ) commune aux deux vecteurs vaut exactement 0.

    Lève
    ----
    ConfigError
        Si v et w ne partagent pas k et x₀
    """
    _check_compatible(v, w)
    gv = v.normalized_coefficients()
    gw = w.normalized_coefficients()
    table = harmonics(sym.N2, v.directions) if len(v) else None
    by_zeta: Dict[Tuple[int, int, int], list] = {}
    for (zeta, l, m), value in sym.coeffs.items():
        by_zeta.setdefault(zeta, []).append((l, m, value))

    total = 0j
    for zeta, terms in by_zeta.items():
        i, j = _pairs(v, w, zeta)
        if i.size == 0:
            continue
        products = gv[i] * np.conj(gw[j])
        for l, m, value in terms:
            total += VOLUME * value * complex(np.sum(table[l * l + l + m, i] * products))
    return total


def position_expectation(zeta, v: GreenVector) -> complex:
    """⟨e^{i⟨ζ,x⟩} g, g⟩ ; vaut exactement 1 pour ζ = 0."""
    zeta = tuple(int(c) for c in zeta)
    if not any(zeta):
        return 1.0 + 0j
    g = v.normalized_coefficients()
    i, j = _pairs(v, v, zeta)
    if i.size == 0:
        return 0j
    return VOLUME * complex(np.sum(g[i] * np.conj(g[j])))


def momentum_measure(v: GreenVector, normalize: bool = True) -> MomentumMeasure:
    """
    Atomes (ξ̄, |coefficient(ξ)|²) ; masse totale non normalisée · 8π³ = norm_sq.

    Lève
    ----
    MeasureError
        Si la masse totale est nulle
    """
    weights = np.abs(np.asarray(v.coefficients)) ** 2
    keep = v.energies > 0.0
    if not keep.all():
        logger.warning("Mode d'énergie nulle exclu de la mesure (direction indéfinie)")
    directions, weights = v.directions[keep], weights[keep]
    total = float(np.sum(weights))
    if total <= 0.0 or not math.isfinite(total):
        logger.error(f"Mesure dégénérée: masse totale {total!r}")
        raise MeasureError(f"Masse totale dégénérée ({total!r}) pour λ={v.lam!r}")
    if normalize:
        weights = weights / total
    return MomentumMeasure(directions.copy(), weights, normalize)


def top_mass_fraction(mu: MomentumMeasure, j: int) -> float:
    """Somme des j plus grands poids, rapportée à la masse totale."""
    if j < 1:
        raise ParameterError(f"j doit être ≥ 1, reçu {j}")
    if j >= len(mu):
        return 1.0
    top = np.partition(mu.weights, len(mu) - j)[len(mu) - j :]
    return float(np.sum(top) / mu.total_mass)


def direction_mass(mu: MomentumMeasure, direction, radius: float) -> float:
    """Fraction de masse des atomes à distance géodésique ≤ radius de la direction donnée."""
    d = np.asarray(direction, dtype=np.float64)
    norm = float(np.linalg.norm(d))
    if norm == 0.0:
        raise ParameterError("La direction du cône doit être non nulle")
    angles = np.arccos(np.clip(mu.directions @ (d / norm), -1.0, 1.0))
    return float(np.sum(mu.weights[angles <= radius]) / mu.total_mass)


def measure_expectation(sym: Symbol, mu: MomentumMeasure) -> complex:
    """
    ∫ a d(dx/8π³ × μ) : seules les composantes ζ = 0 survivent à l'intégrale en x.
    """
    terms = [(l, m, v) for (z, l, m), v in sym.coeffs.items() if not any(z)]
    if not terms:
        return 0j
    table = harmonics(max(l for l, _, _ in terms), mu.directions)
    weights = mu.weights / mu.total_mass
    return complex(sum(v * np.sum(table[l * l + l + m] * weights) for l, m, v in terms))


def op_norm_bound(sym: Symbol) -> float:
    """Σ |â(ζ,l,m)| √((2l+1)/4π) : e^{i⟨ζ,x⟩} est unitaire et sup |Y_{l,m}| = √((2l+1)/4π)."""
    return float(
        sum(abs(v) * math.sqrt((2 * l + 1) / (4.0 * math.pi)) for (_, l, _), v in sym.coeffs.items())
    )


def truncation_matrix_gap(sym: Symbol, v_full: GreenVector, v_trunc: GreenVector) -> dict:
    """
    Compare ⟨Op(a) g, g⟩ et ⟨Op(a) g_L, g_L⟩ ; l'écart est majoré par 2‖Op(a)‖ ‖g_L - g‖.
    """
    _check_compatible(v_full, v_trunc)
    if v_full.lam != v_trunc.lam:
        raise ConfigError(f"λ différents: {v_full.lam!r} vs {v_trunc.lam!r}")
    missing = np.setdiff1d(v_trunc.keys, v_full.keys)
    if missing.size:
        raise ConfigError(f"{missing.size} mode(s) du vecteur tronqué absents du vecteur complet")
    full = op_matrix_element(sym, v_full, v_full)
    truncated = op_matrix_element(sym, v_trunc, v_trunc)
    distance = vector_distance(v_full, v_trunc)
    record = {
        "full": full,
        "truncated": truncated,
        "difference": abs(full - truncated),
        "distance": distance,
        "bound": 2.0 * op_norm_bound(sym) * distance,
    }
    logger.debug(f"Écart de troncature: {record['difference']:.3g} ≤ {record['bound']:.3g}")
    return record
