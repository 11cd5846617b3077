"""
Exceptions de ScatterLab.

Chaque classe porte le code de sortie utilisé par la ligne de commande :
2 configuration/paramètre, 3 couverture, 4 solveur/ajustement, 5 entrées/sorties.
"""


class ScatterLabError(Exception):
    """Racine de toutes les erreurs levées par ScatterLab."""

    exit_code: int = 1


class ConfigError(ScatterLabError, ValueError):
    """Configuration d'expérience invalide ou illisible."""

    exit_code = 2


class ParameterError(ScatterLabError, ValueError):
    """Argument hors du domaine d'une opération."""

    exit_code = 2


class NormalizationError(ParameterError):
    """Direction non unitaire passée à une harmonique sphérique."""


class CoverageError(ScatterLabError, ValueError):
    """Le spectre fourni ne couvre pas la fenêtre d'énergie demandée."""

    exit_code = 3


class DegeneracyError(ScatterLabError, ValueError):
    """Deux énergies coïncident : k est (numériquement) rationnellement dépendant."""

    exit_code = 4


class PoleError(ScatterLabError, ValueError):
    """Évaluation trop proche d'une énergie non perturbée."""

    exit_code = 4


class SolverError(ScatterLabError, RuntimeError):
    """La bissection n'a pas trouvé de changement de signe dans un intervalle."""

    exit_code = 4


class FitError(ScatterLabError, RuntimeError):
    """Pas assez de points exploitables pour un ajustement."""

    exit_code = 4


class EmptyTruncationError(ScatterLabError, ValueError):
    """L'ensemble de troncature A(λ, L) est vide."""

    exit_code = 4


class MeasureError(ScatterLabError, ValueError):
    """Mesure d'impulsion de masse totale nulle."""

    exit_code = 4


class CapacityError(ScatterLabError, MemoryError):
    """La fenêtre demandée dépasse le budget mémoire d'énumération."""

    exit_code = 3


class OutputError(ScatterLabError, OSError):
    """Échec d'écriture d'un fichier de sortie."""

    exit_code = 5
