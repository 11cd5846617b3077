"""
Cartes de densité en impulsion sur le plan (θ, φ).

θ est l'angle polaire depuis +z (axe vertical, de 0 en haut à π en bas), φ l'azimut
depuis +x (axe horizontal, [0, 2π)). Les atomes sont lissés par un noyau gaussien
sphérique exp(-(1 - ⟨p, d⟩)/b²) de largeur b radians.
"""

import math
from pathlib import Path
from typing import Dict, List, Sequence, Union

import numpy as np
from loguru import logger
from reportlab.graphics.shapes import Drawing, Rect
from reportlab.lib import colors
from reportlab.lib.pagesizes import A4, landscape
from reportlab.lib.styles import getSampleStyleSheet
from reportlab.lib.units import mm
from reportlab.platypus import Paragraph, SimpleDocTemplate, Spacer, Table, TableStyle

from ScatterLab.utils.errors import OutputError, ParameterError
from ScatterLab.utils.io import write_bytes
from ScatterLab.utils.quantize import MomentumMeasure
from ScatterLab.utils.version import __VERSION__

# Nine stops of the viridis colormap (matplotlib `_cm_listed._viridis_data`, CC0), taken at
# entries 0, 32, ..., 224 and 255 of its 256-entry table and rounded to 8-bit RGB
VIRIDIS = np.array(
    [
        (68, 1, 84),
        (71, 44, 122),
        (59, 81, 139),
        (44, 113, 142),
        (33, 144, 141),
        (39, 173, 129),
        (92, 200, 99),
        (170, 220, 50),
        (253, 231, 37),
    ],
    dtype=np.float64,
)
ATOM_CHUNK = 256
# Atoms lighter than this fraction of the heaviest one are not rendered
ATOM_FLOOR = 1e-9


def pixel_directions(width: int, height: int) -> np.ndarray:
    """Directions unitaires des centres de pixels, forme (height, width, 3)."""
    theta = (np.arange(height) + 0.5) * math.pi / height
    phi = (np.arange(width) + 0.5) * 2.0 * math.pi / width
    tt, pp = np.meshgrid(theta, phi, indexing="ij")
    return np.stack([np.sin(tt) * np.cos(pp), np.sin(tt) * np.sin(pp), np.cos(tt)], axis=-1)


def smoothed_density(
    mu: MomentumMeasure, width: int = 360, height: int = 180, bandwidth: float = 0.05
) -> np.ndarray:
    """Densité lissée (height, width) de la mesure, non normalisée."""
    if width < 1 or height < 1:
        raise ParameterError(f"Taille d'image invalide: {width}x{height}")
    if not bandwidth > 0.0:
        raise ParameterError(f"La largeur de bande doit être positive, reçu {bandwidth}")
    pixels = pixel_directions(width, height).reshape(-1, 3)
    weights = mu.weights
    keep = weights >= ATOM_FLOOR * weights.max() if len(mu) else np.zeros(0, dtype=bool)
    directions, weights = mu.directions[keep], weights[keep]
    inv_b2 = 1.0 / (bandwidth * bandwidth)
    density = np.zeros(pixels.shape[0])
    for start in range(0, weights.size, ATOM_CHUNK):
        dots = pixels @ directions[start : start + ATOM_CHUNK].T
        density += np.exp((dots - 1.0) * inv_b2) @ weights[start : start + ATOM_CHUNK]
    logger.debug(f"Densité lissée: {weights.size} atomes sur {width}x{height} pixels, b={bandwidth}")
    return density.reshape(height, width)


def colorize(density: np.ndarray, colormap: str = "viridis") -> np.ndarray:
    """
    Intensités (height, width) → pixels RGB uint8, échelle linéaire sur [0, max].

    `viridis` interpole linéairement les neuf points de VIRIDIS (table de matplotlib),
    `grayscale` va du noir (0) au blanc (255).
    """
    peak = float(density.max()) if density.size else 0.0
    scaled = density / peak if peak > 0.0 else np.zeros_like(density)
    if colormap == "grayscale":
        gray = np.round(255.0 * scaled).astype(np.uint8)
        return np.repeat(gray[..., None], 3, axis=-1)
    if colormap != "viridis":
        raise ParameterError(f"Palette inconnue: {colormap} (viridis ou grayscale)")
    stops = np.linspace(0.0, 1.0, VIRIDIS.shape[0])
    rgb = np.stack([np.interp(scaled, stops, VIRIDIS[:, c]) for c in range(3)], axis=-1)
    return np.round(rgb).astype(np.uint8)


def encode_ppm(rgb: np.ndarray) -> bytes:
    """Image PPM binaire (P6), sans compression."""
    height, width, _ = rgb.shape
    header = f"P6\n{width} {height}\n255\n".encode("ascii")
    return header + np.ascontiguousarray(rgb, dtype=np.uint8).tobytes()


def write_heatmap(
    mu: MomentumMeasure,
    path: Union[str, Path],
    bandwidth: float = 0.05,
    width: int = 360,
    height: int = 180,
    colormap: str = "viridis",
) -> np.ndarray:
    """Écrit la carte PPM et renvoie la densité lissée utilisée."""
    density = smoothed_density(mu, width, height, bandwidth)
    write_bytes(path, encode_ppm(colorize(density, colormap)))
    logger.success(f"Carte de densité écrite: {path}")
    return density


def peak_angles(density: np.ndarray) -> tuple:
    """(θ, φ) du pixel le plus intense."""
    height, width = density.shape
    i, j = np.unravel_index(int(np.argmax(density)), density.shape)
    return (i + 0.5) * math.pi / height, (j + 0.5) * 2.0 * math.pi / width


def write_heatmap_pdf(
    panels: Sequence[Dict],
    path: Union[str, Path],
    title: str = "Densité en impulsion",
    cells: tuple = (180, 90),
) -> Path:
    """
    Rapport PDF vectoriel : une carte par panneau, suivie d'un tableau récapitulatif.

    Paramètres
    ----------
    panels : Sequence[Dict]
        Entrées {"label", "density", "summary"} ; `summary` est une liste de paires
        (nom, valeur) affichées sous la carte
    path : str | Path
        Fichier PDF de sortie
    cells : tuple
        Résolution (largeur, hauteur) du rendu vectoriel, la densité est sous-échantillonnée
    """
    path = Path(path)
    styles = getSampleStyleSheet()
    story: List = [Paragraph(title, styles["Title"]), Spacer(1, 4 * mm)]
    draw_w, draw_h = 240 * mm, 120 * mm
    nx, ny = cells
    for panel in panels:
        density = np.asarray(panel["density"])
        rows = np.linspace(0, density.shape[0] - 1, ny).astype(int)
        cols = np.linspace(0, density.shape[1] - 1, nx).astype(int)
        rgb = colorize(density[np.ix_(rows, cols)])
        drawing = Drawing(draw_w, draw_h)
        cw, ch = draw_w / nx, draw_h / ny
        for i in range(ny):
            for j in range(nx):
                r, g, b = (int(c) for c in rgb[i, j])
                # PDF y axis points up, theta = 0 is drawn at the top
                drawing.add(
                    Rect(j * cw, draw_h - (i + 1) * ch, cw, ch, strokeColor=None,
                         fillColor=colors.Color(r / 255.0, g / 255.0, b / 255.0))
                )
        story.append(Paragraph(str(panel.get("label", "")), styles["Heading2"]))
        story.append(drawing)
        summary = [["Grandeur", "Valeur"]] + [[str(k), str(v)] for k, v in panel.get("summary", [])]
        table = Table(summary, colWidths=[80 * mm, 80 * mm])
        table.setStyle(
            TableStyle(
                [
                    ("BACKGROUND", (0, 0), (-1, 0), colors.grey),
                    ("TEXTCOLOR", (0, 0), (-1, 0), colors.whitesmoke),
                    ("FONTNAME", (0, 0), (-1, 0), "Helvetica-Bold"),
                    ("GRID", (0, 0), (-1, -1), 0.5, colors.black),
                    ("FONTNAME", (0, 1), (-1, -1), "Helvetica"),
                ]
            )
        )
        story.append(Spacer(1, 3 * mm))
        story.append(table)
        story.append(Spacer(1, 8 * mm))
    story.append(Paragraph(f"ScatterLab {__VERSION__}", styles["Normal"]))

    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        SimpleDocTemplate(str(path), pagesize=landscape(A4)).build(story)
    except OSError as e:
        logger.error(f"Échec de l'écriture du PDF {path}: {e}")
        raise OutputError(f"Échec de l'écriture du PDF {path}: {e}") from e
    logger.success(f"Rapport PDF écrit: {path}")
    return path
