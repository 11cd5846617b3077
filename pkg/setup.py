from setuptools import find_packages, setup

with open("README.md", "r") as readme:
    long_description = readme.read()

setup(
    name="ScatterLab",
    version="0.1.0",
    description="Laboratoire numérique du diffuseur ponctuel sur le 3-tore : spectres perturbés, fonctions de Green, mesures en impulsion et statistiques de paires",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=find_packages(exclude=["tests", "tests.*"]),
    include_package_data=True,
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: GNU General Public License v3 (GPLv3)",
        "Operating System :: OS Independent",
        "Topic :: Scientific/Engineering :: Physics",
    ],
    license="GPLv3",
    keywords=[
        "point scatterer",
        "diffuseur ponctuel",
        "Seba",
        "torus",
        "quasimomentum",
        "Floquet-Bloch",
        "Green function",
        "pair correlation",
        "lattice points",
        "quantum chaos",
    ],
    entry_points={
        "console_scripts": [
            "scatterlab=ScatterLab.__main__:cli_launcher",
            "ScatterLab=ScatterLab.__main__:cli_launcher",
        ],
    },
    python_requires=">=3.10",
    install_requires=[
        "numpy      >= 1.26",
        "scipy      >= 1.11",
        "reportlab  == 4.4.4",
        "loguru     == 0.7.3",
        "pyyaml     == 6.0.3",
        "filelock   == 3.20.0",  # Used for cross-platform atomic result writes
    ],
    extras_require={
        "tests": ["pytest >= 7.4"],
    },
)
