import argparse
import sys
from typing import List, Optional, Sequence

from loguru import logger

from ScatterLab import enable_debug_console
from ScatterLab.utils import commands
from ScatterLab.utils.errors import ParameterError, ScatterLabError
from ScatterLab.utils.io import ExperimentConfig, load_config, load_symbol_records
from ScatterLab.utils.quantize import Symbol
from ScatterLab.utils.settings import settings

SUBCOMMANDS = ("spectrum", "perturbed", "measure", "paircorr", "localize", "count", "weyl")


def parse_index(value: str) -> List[int]:
    """
    Indices de valeurs propres "i" ou "a:b" (b exclu), dans l'ordre croissant de la fenêtre.

    Parameters
    ----------
    value : str
        Indice unique ou plage

    Returns
    -------
    list
        Liste des indices demandés
    """
    try:
        if ":" in value:
            a, b = (int(c) for c in value.split(":", 1))
            return list(range(a, b))
        return [int(value)]
    except ValueError as e:
        raise ParameterError(f"Indice invalide: '{value}', attendu i ou a:b") from e


def parse_direction(value: Optional[str]) -> Optional[List[float]]:
    if value is None:
        return None
    try:
        direction = [float(c) for c in value.split(",")]
    except ValueError as e:
        raise ParameterError(f"Direction invalide: '{value}', attendu x,y,z") from e
    if len(direction) != 3:
        raise ParameterError(f"Direction invalide: '{value}', attendu 3 composantes")
    return direction


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scatterlab",
        description="Laboratoire numérique du diffuseur ponctuel sur le 3-tore avec quasi-impulsion",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=(
            "Exemples:\n"
            "  scatterlab spectrum --config configs/reference.json --window 0:10\n"
            "  scatterlab measure --window 99:101 --index 0:6 --pdf\n"
            "  scatterlab localize --window 0:300 -T 300\n\n"
            "Codes de sortie:\n"
            "  0 succès, 1 erreur inattendue, 2 configuration, 3 couverture ou capacité,\n"
            "  4 calcul (solveur, pôle, ajustement), 5 écriture des fichiers"
        ),
    )
    parser.add_argument("command", choices=SUBCOMMANDS, help="Expérience à exécuter")
    parser.add_argument(
        "--config",
        type=str,
        required=False,
        help="Chemin vers le fichier JSON de configuration (défaut: valeurs intégrées)",
    )
    parser.add_argument("--out", type=str, help="Répertoire de sortie (remplace output_dir)")
    parser.add_argument(
        "--k", type=str, help="Quasi-impulsion a,b,c ou nom de préréglage (ex: 'reference')"
    )
    parser.add_argument("--phi", type=float, help="Paramètre d'extension φ ∈ (-π, π)")
    parser.add_argument("--window", type=str, help="Fenêtre d'énergie a:b")
    parser.add_argument(
        "--bandwidth",
        type=float,
        help="Largeur du noyau gaussien sphérique des cartes, en radians (défaut: 0.05)",
    )
    parser.add_argument(
        "--threads",
        type=int,
        help="Nombre de threads de l'énumération (défaut: SCATTER_THREADS puis 1)",
    )
    parser.add_argument(
        "--debug",
        action="store_true",
        help="Activer le niveau de journalisation debug sur la console (la journalisation dans les fichiers est toujours au niveau debug)",
    )
    parser.add_argument(
        "--index",
        type=str,
        default="0",
        help="measure: indice i ou plage a:b des valeurs propres de la fenêtre (défaut: 0)",
    )
    parser.add_argument("--pdf", action="store_true", help="measure: ajouter un rapport PDF des cartes")
    parser.add_argument(
        "--colormap",
        choices=("viridis", "grayscale"),
        default="viridis",
        help="measure: palette des cartes (défaut: viridis)",
    )
    parser.add_argument(
        "--cone-direction",
        type=str,
        help="measure: direction x,y,z dont on mesure la masse dans un cône",
    )
    parser.add_argument(
        "--cone-radius",
        type=float,
        default=0.1,
        help="measure: demi-angle du cône de mesure en radians (défaut: 0.1)",
    )
    parser.add_argument(
        "--symbol",
        type=str,
        help="measure: fichier JSON de symbole (liste {zeta, l, m, re, im}) dont on calcule les éléments de matrice",
    )
    parser.add_argument("-D", type=float, dest="D", help="paircorr: demi-largeur de la fenêtre")
    parser.add_argument("-T", type=float, dest="T", help="paircorr, localize: énergie maximale")
    parser.add_argument(
        "--R-max", type=float, dest="R_max", default=80.0, help="count: rayon maximal (défaut: 80)"
    )
    parser.add_argument(
        "--x-max", type=float, dest="x_max", default=1e4, help="weyl: énergie maximale (défaut: 1e4)"
    )
    return parser


def run(args: argparse.Namespace) -> None:
    config: ExperimentConfig = load_config(args.config).with_overrides(
        k=args.k,
        phi=args.phi,
        window=args.window,
        bandwidth=args.bandwidth,
        threads=args.threads,
        output_dir=args.out,
    )
    if config.threads is not None:
        settings.threads = config.threads
    logger.info(
        f"Main: commande {args.command}, k={config.k_label}, fenêtre={config.window}, sortie={config.output_dir}"
    )

    if args.command == "spectrum":
        commands.cmd_spectrum(config)
    elif args.command == "perturbed":
        commands.cmd_perturbed(config)
    elif args.command == "measure":
        commands.cmd_measure(
            config,
            parse_index(args.index),
            pdf=args.pdf,
            cone_direction=parse_direction(args.cone_direction),
            cone_radius=args.cone_radius,
            colormap=args.colormap,
            symbol=Symbol.from_records(load_symbol_records(args.symbol)) if args.symbol else None,
        )
    elif args.command == "paircorr":
        commands.cmd_paircorr(config, D=args.D, T=args.T)
    elif args.command == "localize":
        commands.cmd_localize(config, T=args.T)
    elif args.command == "count":
        commands.cmd_count(config, args.R_max)
    elif args.command == "weyl":
        commands.cmd_weyl(config, args.x_max)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Point d'entrée testable : renvoie le code de sortie au lieu de quitter."""
    args = build_parser().parse_args(argv)

    # Enable debug console logging if requested
    if args.debug:
        enable_debug_console()
        logger.debug("Mode debug activé")

    try:
        run(args)
    except ScatterLabError as e:
        logger.error(f"Main: {type(e).__name__}: {e}")
        return e.exit_code
    except Exception as e:
        logger.exception(f"Main: erreur inattendue: {e}")
        return 1
    logger.info(f"Main: commande {args.command} terminée")
    return 0


def cli_launcher():
    sys.exit(main())


if __name__ == "__main__":
    cli_launcher()
