"""
Commandes de la ligne de commande : chaque commande lit une ExperimentConfig, exécute
l'expérience et écrit ses tables CSV/JSON (et images) dans `output_dir`.
"""

import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
from loguru import logger

from ScatterLab.utils.errors import (
    CoverageError,
    DegeneracyError,
    EmptyTruncationError,
    FitError,
    ParameterError,
)
from ScatterLab.utils.greens import green_full, green_truncated
from ScatterLab.utils.io import ExperimentConfig, write_csv, write_json
from ScatterLab.utils.lattice import (
    diophantine_exponent_estimate,
    enumerate_window,
    energies_upto,
    independence_check,
    remainder_exponent_fit,
    weyl_main_term,
    weyl_remainder_table,
)
from ScatterLab.utils.quantize import (
    Symbol,
    direction_mass,
    measure_expectation,
    momentum_measure,
    op_matrix_element,
    op_norm_bound,
    top_mass_fraction,
    truncation_matrix_gap,
)
from ScatterLab.utils.report import peak_angles, write_heatmap, write_heatmap_pdf
from ScatterLab.utils.settings import settings
from ScatterLab.utils.spectral import perturbed_spectrum
from ScatterLab.utils.stats import (
    FilterParams,
    PairCorrConfig,
    certify_retained,
    localization_filter,
    pair_correlation,
    pair_sum,
    pc_limit,
    select_filter_params,
    shell_counts,
    shell_second_moment,
    spacing_distribution,
    tail_aggregate,
    tail_sums,
)

COUNT_STEP = 0.5
FIT_MIN_RADIUS = 5.0


def _output(config: ExperimentConfig, name: str) -> Path:
    return Path(config.output_dir) / name


def _apply_threads(config: ExperimentConfig) -> None:
    if config.threads is not None:
        settings.threads = config.threads


def _ratio(value: float, limit: float) -> Optional[float]:
    return value / limit if limit != 0.0 else None


def _symbol_report(config: ExperimentConfig, symbol: Symbol, vector, mu) -> Dict:
    """⟨Op(a) g, g⟩ sur le vecteur complet et tronqué en L = λ^{-δ}, et l'intégrale de a contre μ."""
    report = {
        "matrix_element": op_matrix_element(symbol, vector, vector),
        "measure_expectation": measure_expectation(symbol, mu),
        "op_norm_bound": op_norm_bound(symbol),
        "real": symbol.is_real(),
    }
    L = vector.lam ** (-config.delta)
    try:
        truncated = green_truncated(config.k, vector.x0, vector.lam, L)
    except EmptyTruncationError:
        logger.warning(f"A(λ={vector.lam!r}, L={L:.3g}) vide, pas de comparaison tronquée")
        report["truncated"] = None
        return report
    gap = truncation_matrix_gap(symbol, vector, truncated)
    report["truncated"] = {"L": L, **{key: gap[key] for key in ("truncated", "difference", "distance", "bound")}}
    return report


def cmd_spectrum(config: ExperimentConfig) -> Path:
    """Spectre non perturbé de la fenêtre : xi1,xi2,xi3,energy,dir_x,dir_y,dir_z."""
    _apply_threads(config)
    spectrum = enumerate_window(config.k, config.window)
    rows = (
        (*(int(c) for c in xi), float(e), *(float(c) for c in d))
        for xi, e, d in zip(spectrum.xi, spectrum.energies, spectrum.directions)
    )
    path = write_csv(
        _output(config, "spectrum.csv"),
        ("xi1", "xi2", "xi3", "energy", "dir_x", "dir_y", "dir_z"),
        rows,
    )
    logger.success(f"{len(spectrum)} modes écrits dans {path}")
    return path


def cmd_perturbed(config: ExperimentConfig) -> Path:
    """Valeurs propres perturbées : gap_index,n_left,n_right,lambda,residual,resolution_limited."""
    _apply_threads(config)
    roots = perturbed_spectrum(config.k, config.scatterer, config.window)
    rows = (
        (r.gap_index, r.n_left, r.n_right, r.lam, r.residual, r.resolution_limited) for r in roots
    )
    path = write_csv(
        _output(config, "perturbed.csv"),
        ("gap_index", "n_left", "n_right", "lambda", "residual", "resolution_limited"),
        rows,
    )
    logger.success(f"{len(roots)} valeurs propres perturbées écrites dans {path}")
    return path


def cmd_measure(
    config: ExperimentConfig,
    indices: Sequence[int],
    pdf: bool = False,
    cone_direction: Optional[Sequence[float]] = None,
    cone_radius: float = 0.1,
    colormap: str = "viridis",
    symbol: Optional[Symbol] = None,
) -> List[Path]:
    """
    Mesure en impulsion normalisée de g_λ pour les valeurs propres d'indices donnés
    (ordre croissant dans la fenêtre, à partir de 0) : CSV theta,phi,weight, carte PPM,
    résumé JSON et, sur demande, un rapport PDF. Avec un symbole, le résumé contient aussi
    ses éléments de matrice.
    """
    _apply_threads(config)
    roots = perturbed_spectrum(config.k, config.scatterer, config.window)
    bad = [i for i in indices if not 0 <= i < len(roots)]
    if bad:
        logger.error(f"Indice(s) {bad} hors de [0, {len(roots)})")
        raise ParameterError(f"Indice(s) {bad} hors des {len(roots)} valeurs propres de la fenêtre")

    written: List[Path] = []
    panels: List[Dict] = []
    for index in indices:
        root = roots[index]
        vector = green_full(config.k, config.scatterer.x0, root.lam)
        mu = momentum_measure(vector, normalize=True)
        theta, phi = mu.angles()
        written.append(
            write_csv(
                _output(config, f"measure_{index}.csv"),
                ("theta", "phi", "weight"),
                zip(theta.tolist(), phi.tolist(), mu.weights.tolist()),
            )
        )
        density = write_heatmap(
            mu, _output(config, f"measure_{index}.ppm"), bandwidth=config.bandwidth, colormap=colormap
        )
        written.append(_output(config, f"measure_{index}.ppm"))
        peak = peak_angles(density)
        summary = {
            "index": index,
            "lambda": root.lam,
            "gap_index": root.gap_index,
            "n_left": root.n_left,
            "n_right": root.n_right,
            "modes": len(vector),
            "tail_estimate": vector.tail_estimate,
            "top_mass": {str(j): top_mass_fraction(mu, j) for j in (1, 2, 5)},
            "peak": {"theta": peak[0], "phi": peak[1]},
            "angles": "theta: polar angle from +z, phi: azimuth from +x in [0, 2pi)",
            "config": config.provenance(),
        }
        if cone_direction is not None:
            summary["cone"] = {
                "direction": list(cone_direction),
                "radius": cone_radius,
                "mass": direction_mass(mu, cone_direction, cone_radius),
            }
        if symbol is not None:
            summary["symbol"] = _symbol_report(config, symbol, vector, mu)
        written.append(write_json(_output(config, f"measure_{index}.json"), summary))
        logger.info(
            f"λ[{index}]={root.lam!r}: masse du premier atome {summary['top_mass']['1']:.4f}"
        )
        panels.append(
            {
                "label": f"λ[{index}] = {root.lam:.6f}",
                "density": density,
                "summary": [
                    ("λ", f"{root.lam:.9f}"),
                    ("lacune", f"({root.n_left:.6f}, {root.n_right:.6f})"),
                    ("masse des 1/2/5 premiers atomes",
                     " / ".join(f"{v:.4f}" for v in summary["top_mass"].values())),
                ],
            }
        )
    if pdf:
        written.append(write_heatmap_pdf(panels, _output(config, "measure.pdf")))
    return written


def _pair_report(spectrum, D: float, T: float) -> Dict:
    cfg = PairCorrConfig.shell(D, T)
    R = pair_correlation(spectrum, cfg)
    limit = pc_limit(cfg)
    return {
        "R": R,
        "limit": limit,
        "ratio": _ratio(R, limit),
        "pairs": pair_sum(spectrum, cfg),
        "pairs_expected": 3.0 * math.pi**2 * D * T**1.5,
    }


def _resolve_T(config: ExperimentConfig, T: Optional[float]) -> float:
    T = float(config.window[1] if T is None else T)
    if not T > 0.0:
        raise ParameterError(f"T doit être strictement positif, reçu {T}")
    return T


def cmd_paircorr(config: ExperimentConfig, D: Optional[float] = None, T: Optional[float] = None) -> Path:
    """Corrélation de paires sur la coquille [T/2, T] et sa limite ; rapport JSON."""
    _apply_threads(config)
    D = float(config.filter.get("D") or 1.0) if D is None else float(D)
    T = _resolve_T(config, T)
    spectrum = enumerate_window(config.k, config.window, check_distinct=False)
    report = {"T": T, "D": D, "pair_corr": _pair_report(spectrum, D, T), "config": config.provenance()}
    if spectrum.covers(0.0, T):
        try:
            report["spacing"] = spacing_distribution(spectrum, T)
        except CoverageError as e:
            logger.warning(f"Distribution des espacements ignorée: {e}")
    path = write_json(_output(config, "paircorr.json"), report)
    logger.success(f"Corrélation de paires à T={T}: ratio {report['pair_corr']['ratio']}")
    return path


def _filter_params(config: ExperimentConfig, spectrum, T: float, tails) -> FilterParams:
    chosen = config.filter
    G, D = float(chosen.get("G") or 10.0), float(chosen.get("D") or 1.0)
    E, F = chosen.get("E"), chosen.get("F")
    if E is None or F is None:
        canonical = select_filter_params(spectrum, G, D, T, tails=tails)
        E = canonical.E if E is None else E
        F = canonical.F if F is None else F
    return FilterParams(G, D, float(E), float(F))


def cmd_localize(config: ExperimentConfig, T: Optional[float] = None) -> List[Path]:
    """
    Filtre de localisation sur 𝒩(T) et certificats de masse des valeurs retenues :
    rapport JSON et CSV des certificats.
    """
    _apply_threads(config)
    T = _resolve_T(config, T)
    a, b = config.window
    if a > 0.0 or b < T:
        logger.error(f"Fenêtre {config.window} ne couvre pas [0, {T}]")
        raise CoverageError(f"La fenêtre {config.window} doit couvrir [0, {T}]")
    D = float(config.filter.get("D") or 1.0)
    # neighbours of m up to D/sqrt(m) beyond T enter the cluster terms
    spectrum = enumerate_window(config.k, (0.0, T + D), check_distinct=False)
    tails = tail_sums(spectrum, D, T)
    params = _filter_params(config, spectrum, T, tails)
    result = localization_filter(spectrum, params, T, tails=tails)
    certificates = certify_retained(spectrum, config.scatterer, result)

    budget = T**1.5 / params.G
    min_top = min((c.top_cluster_fraction for c in certificates), default=float("nan"))
    report = {
        "T": T,
        **params.as_dict(),
        "retained": int(result.retained.size),
        "total": result.total,
        "retained_density": result.density,
        "density_floor": 1.0 - 3.0 / params.G,
        "removed": {
            "gap": result.removed_gap,
            "cluster": result.removed_cluster,
            "tail": result.removed_tail,
            "budget": budget,
        },
        "min_top_mass": min_top,
        "min_top_atom_fraction": min((c.top_fraction for c in certificates), default=float("nan")),
        "smallest_energy": float(spectrum.energies[0]) if len(spectrum) else None,
        "pair_corr": _pair_report(spectrum, params.D, T),
        "shells": shell_second_moment(shell_counts(spectrum, T), T),
        "tail_aggregate": tail_aggregate(spectrum, params.D, T, tails=tails),
        "config": config.provenance(),
    }
    header = (
        "m", "lambda", "left_gap", "top_atom_mass", "cluster_mass", "cluster_atoms",
        "tail_mass", "total_mass", "top_fraction", "top_cluster_fraction", "reference_bound",
    )
    rows = (
        (c.m, c.lam, c.left_gap, c.top_atom_mass, c.cluster_mass, c.cluster_atoms, c.tail_mass,
         c.total_mass, c.top_fraction, c.top_cluster_fraction, c.reference_bound)
        for c in certificates
    )
    paths = [
        write_json(_output(config, "localize.json"), report),
        write_csv(_output(config, "certificates.csv"), header, rows),
    ]
    logger.success(
        f"Localisation à T={T}: densité retenue {result.density:.4f}, masse minimale {min_top:.4g}"
    )
    return paths


def cmd_count(config: ExperimentConfig, R_max: float) -> List[Path]:
    """Table S(R) sur R = 0.5, 1, ..., R_max et ajustement de l'exposant du reste sur R ≥ 5."""
    _apply_threads(config)
    radii = np.arange(1, int(math.floor(R_max / COUNT_STEP)) + 1) * COUNT_STEP
    energies = energies_upto(config.k, float(radii.max()) ** 2) if radii.size else np.empty(0)
    counts = np.searchsorted(energies, radii * radii, side="right")
    rows = [
        (float(R), int(S), weyl_main_term(float(R * R)), float(S) - weyl_main_term(float(R * R)))
        for R, S in zip(radii, counts)
    ]
    report: Dict = {"R_max": R_max, "points": len(rows), "config": config.provenance()}
    try:
        fit = remainder_exponent_fit(config.k, radii[radii >= FIT_MIN_RADIUS])
        report["fit"] = {"slope": fit.slope, "intercept": fit.intercept, "residual": fit.residual}
    except FitError as e:
        logger.warning(f"Ajustement de l'exposant impossible: {e}")
        report["fit"] = None
        report["fit_error"] = str(e)
    return [
        write_csv(_output(config, "count.csv"), ("R", "S", "weyl", "remainder"), rows),
        write_json(_output(config, "count.json"), report),
    ]


def cmd_weyl(config: ExperimentConfig, x_max: float, points: int = 64, q_max: int = 20_000) -> List[Path]:
    """Table du reste de Weyl N(x) - (4/3)πx^{3/2} et type diophantien empirique de k."""
    _apply_threads(config)
    if not x_max > 0.0:
        raise ParameterError(f"x_max doit être strictement positif, reçu {x_max}")
    grid = np.linspace(x_max / points, x_max, points)
    table = weyl_remainder_table(config.k, grid)
    report: Dict = {"x_max": x_max, "config": config.provenance()}
    try:
        independence_check(config.k)
        report["independent"] = True
    except DegeneracyError as e:
        report["independent"] = False
        report["relation"] = str(e)
    try:
        report["diophantine_exponent"] = diophantine_exponent_estimate(config.k, q_max)
    except FitError as e:
        report["diophantine_exponent"] = None
        report["diophantine_error"] = str(e)
    scaled = [abs(r["scaled"]) for r in table]
    report["max_scaled_remainder"] = max(scaled) if scaled else None
    return [
        write_csv(
            _output(config, "weyl.csv"),
            ("x", "N", "weyl", "remainder", "scaled"),
            ((r["x"], r["N"], r["weyl"], r["remainder"], r["scaled"]) for r in table),
        ),
        write_json(_output(config, "weyl.json"), report),
    ]
