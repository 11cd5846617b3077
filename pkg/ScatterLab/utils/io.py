"""
Configuration des expériences et écritures atomiques des résultats.

La configuration est un document JSON (donc aussi YAML valide) chargé avec yaml.safe_load.
Les fichiers de sortie sont écrits dans un fichier temporaire voisin puis renommés sous
un verrou filelock.
"""

import csv
import io
import json
import math
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Sequence, Tuple, Union

import numpy as np
import yaml
from filelock import FileLock, Timeout
from loguru import logger

from ScatterLab.utils.errors import ConfigError, OutputError, ParameterError
from ScatterLab.utils.lattice import REFERENCE_K, QuasiMomentum
from ScatterLab.utils.spectral import ScattererConfig
from ScatterLab.utils.version import __VERSION__

PRESETS: Dict[str, QuasiMomentum] = {"reference": REFERENCE_K}
KNOWN_KEYS = {
    "ScatterLab_version",
    "k",
    "x0",
    "phi",
    "window",
    "delta",
    "filter",
    "output_dir",
    "bandwidth",
    "threads",
}
FILTER_KEYS = {"G", "D", "E", "F"}
LOCK_TIMEOUT = 10


def parse_k(value: Union[str, Sequence[float]]) -> Tuple[QuasiMomentum, str]:
    """Quasi-impulsion depuis un nom de préréglage, une liste ou une chaîne "a,b,c"."""
    if isinstance(value, str):
        if value in PRESETS:
            return PRESETS[value], value
        try:
            value = [float(c) for c in value.split(",")]
        except ValueError as e:
            raise ConfigError(f"k inconnu: '{value}' (préréglages: {sorted(PRESETS)})") from e
    try:
        k = QuasiMomentum(tuple(float(c) for c in value))
    except (TypeError, ValueError) as e:
        raise ConfigError(f"k invalide: {value!r} ({e})") from e
    return k, ",".join(repr(c) for c in k.k)


def parse_window(value: Union[str, Sequence[float]]) -> Tuple[float, float]:
    """Fenêtre depuis "a:b" ou [a, b]."""
    if isinstance(value, str):
        value = value.split(":")
    try:
        a, b = (float(c) for c in value)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Fenêtre invalide: {value!r}, attendu a:b") from e
    if not (math.isfinite(a) and math.isfinite(b)) or a < 0.0 or b < a:
        raise ConfigError(f"Fenêtre invalide: [{a}, {b}], il faut 0 ≤ a ≤ b < ∞")
    return a, b


@dataclass(frozen=True)
class ExperimentConfig:
    """
    Paramètres d'une expérience ; `k_label` garde le nom du préréglage pour la provenance.

    Les seuils E et F du filtre peuvent valoir None : ils sont alors choisis par la
    procédure canonique.
    """

    k: QuasiMomentum = REFERENCE_K
    k_label: str = "reference"
    x0: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    phi: float = 0.0
    window: Tuple[float, float] = (0.0, 10.0)
    delta: float = 1.0 / 16.0
    filter: Dict[str, Optional[float]] = field(
        default_factory=lambda: {"G": 10.0, "D": 1.0, "E": None, "F": None}
    )
    output_dir: str = "scatterlab_output"
    bandwidth: float = 0.05
    threads: Optional[int] = None

    def __post_init__(self):
        try:
            ScattererConfig(self.x0, self.phi)
        except ParameterError as e:
            raise ConfigError(str(e)) from e
        parse_window(self.window)
        if not 0.0 < self.delta < 1.0:
            raise ConfigError(f"delta doit être dans (0, 1), reçu {self.delta}")
        if not self.bandwidth > 0.0:
            raise ConfigError(f"La largeur de bande doit être positive, reçu {self.bandwidth}")
        if self.threads is not None and self.threads < 1:
            raise ConfigError(f"threads doit être ≥ 1, reçu {self.threads}")
        unknown = set(self.filter) - FILTER_KEYS
        if unknown:
            raise ConfigError(f"Clés de filtre inconnues: {sorted(unknown)}")

    @property
    def scatterer(self) -> ScattererConfig:
        return ScattererConfig(self.x0, self.phi)

    def with_overrides(self, **overrides: Any) -> "ExperimentConfig":
        """Applique les options de la ligne de commande (les valeurs None sont ignorées)."""
        changes = {key: value for key, value in overrides.items() if value is not None}
        if "k" in changes:
            changes["k"], changes["k_label"] = parse_k(changes["k"])
        if "window" in changes:
            changes["window"] = parse_window(changes["window"])
        return replace(self, **changes)

    def provenance(self) -> Dict[str, Any]:
        """Configuration complète, recopiée dans chaque rapport JSON."""
        data = asdict(self)
        data["k"] = list(self.k.k)
        data["x0"] = list(self.scatterer.x0)
        data["window"] = list(self.window)
        data["ScatterLab_version"] = __VERSION__
        return data


def config_from_dict(data: Dict[str, Any]) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError(f"La configuration doit être un objet, reçu {type(data).__name__}")
    unknown = set(data) - KNOWN_KEYS
    if unknown:
        raise ConfigError(f"Clés de configuration inconnues: {sorted(unknown)}")

    version = data.get("ScatterLab_version")
    if version and version != __VERSION__:
        logger.warning(
            f"La configuration spécifie la version ScatterLab {version} mais la version actuelle est {__VERSION__}. "
            "Veuillez vérifier la compatibilité."
        )

    kwargs: Dict[str, Any] = {}
    if "k" in data:
        kwargs["k"], kwargs["k_label"] = parse_k(data["k"])
    if "x0" in data:
        x0 = data["x0"]
        if not isinstance(x0, (list, tuple)) or len(x0) != 3:
            raise ConfigError(f"x0 doit être une liste de 3 réels, reçu {x0!r}")
        kwargs["x0"] = tuple(float(c) for c in x0)
    if "window" in data:
        kwargs["window"] = parse_window(data["window"])
    for key in ("phi", "delta", "bandwidth"):
        if key in data:
            kwargs[key] = float(data[key])
    if "filter" in data:
        merged = dict(ExperimentConfig().filter)
        merged.update(data["filter"] or {})
        kwargs["filter"] = merged
    if "output_dir" in data:
        kwargs["output_dir"] = str(data["output_dir"])
    if data.get("threads") is not None:
        kwargs["threads"] = int(data["threads"])
    return ExperimentConfig(**kwargs)


def load_config(filepath: Optional[str]) -> ExperimentConfig:
    """
    Charge et valide une configuration JSON/YAML ; sans fichier, renvoie les valeurs par défaut.

    Le nombre de threads retombe sur la variable d'environnement SCATTER_THREADS.

    Lève
    ----
    ConfigError
        Si le fichier est illisible, mal formé ou contient des valeurs invalides
    """
    if filepath is None:
        config = ExperimentConfig()
    else:
        logger.info(f"Chargement de la configuration depuis: {filepath}")
        try:
            with open(filepath, "r", encoding="utf-8") as f:
                data = yaml.safe_load(f)
            config = config_from_dict(data or {})
        except (OSError, yaml.YAMLError) as e:
            logger.error(f"Échec du chargement de la configuration {filepath}: {e}")
            raise ConfigError(f"Échec du chargement de la configuration {filepath}: {e}") from e
        except ConfigError as e:
            logger.error(f"Configuration invalide {filepath}: {e}")
            raise
        except (TypeError, ValueError) as e:
            logger.error(f"Configuration invalide {filepath}: {e}")
            raise ConfigError(f"Configuration invalide {filepath}: {e}") from e
        logger.success(f"Configuration chargée: k={config.k_label}, fenêtre={config.window}")

    if config.threads is None and os.environ.get("SCATTER_THREADS"):
        try:
            config = replace(config, threads=int(os.environ["SCATTER_THREADS"]))
        except ValueError as e:
            raise ConfigError(f"SCATTER_THREADS invalide: {os.environ['SCATTER_THREADS']!r}") from e
    return config


def _atomic_write(path: Union[str, Path], payload: bytes) -> Path:
    """Écrit `payload` dans un fichier temporaire voisin puis le renomme, sous verrou."""
    path = Path(path)
    temp = Path(str(path) + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with FileLock(str(path) + ".lock", timeout=LOCK_TIMEOUT):
            temp.write_bytes(payload)
            temp.replace(path)
    except Timeout as e:
        logger.error(f"Délai d'expiration du verrou pour {path}")
        raise OutputError(f"Délai d'expiration du verrou pour {path}") from e
    except OSError as e:
        logger.error(f"Échec de l'écriture de {path}: {e}")
        raise OutputError(f"Échec de l'écriture de {path}: {e}") from e
    logger.debug(f"Fichier écrit: {path} ({len(payload)} octets)")
    return path


def _cell(value: Any) -> Any:
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return value


def write_csv(path: Union[str, Path], header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    """CSV UTF-8 avec en-tête, guillemets RFC-4180 et réels en précision repr."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_cell(v) for v in row])
    return _atomic_write(path, buffer.getvalue().encode("utf-8"))


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    if isinstance(value, complex):
        return {"re": _jsonable(value.real), "im": _jsonable(value.imag)}
    return value


def write_json(path: Union[str, Path], data: Dict[str, Any]) -> Path:
    """JSON trié, indenté de 2, valeurs non finies écrites null."""
    text = json.dumps(_jsonable(data), sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False)
    return _atomic_write(path, (text + "\n").encode("utf-8"))


def write_bytes(path: Union[str, Path], payload: bytes) -> Path:
    return _atomic_write(path, payload)


def load_symbol_records(filepath: str) -> list:
    """Liste JSON {"zeta", "l", "m", "re", "im"} d'un symbole."""
    try:
        with open(filepath, "r", encoding="utf-8") as f:
            records = yaml.safe_load(f)
    except (OSError, yaml.YAMLError) as e:
        logger.error(f"Échec du chargement du symbole {filepath}: {e}")
        raise ConfigError(f"Échec du chargement du symbole {filepath}: {e}") from e
    if not isinstance(records, list):
        raise ConfigError(f"Le symbole {filepath} doit être une liste d'entrées")
    return records
