"""
Paramètres globaux de l'application pour ScatterLab.

Fournit un objet de configuration centralisé accessible depuis tous les modules.
Les paramètres sont remplis par les arguments CLI (ou la variable d'environnement
SCATTER_THREADS) et utilisés dans toute l'application.
"""

import os


class Settings:
    """
    Conteneur de paramètres pour toute l'application.

    Attributs
    ---------
    threads : int
        Nombre de threads utilisés pour paralléliser l'énumération par tranches ξ₁.
        1 désactive le parallélisme.
    max_modes : int
        Budget mémoire de l'énumération : nombre maximal de modes qu'une fenêtre
        peut matérialiser avant de lever CapacityError.
    """

    def __init__(self):
        self.threads: int = _threads_from_env()
        self.max_modes: int = 20_000_000


def _threads_from_env() -> int:
    raw = os.environ.get("SCATTER_THREADS", "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


# Instance globale des paramètres accessible depuis n'importe quel module
settings = Settings()
