"""Setup configuration for nl2econ."""

from setuptools import setup
from pathlib import Path

# Read the README file
readme_file = Path(__file__).parent / "README.md"
long_description = readme_file.read_text(encoding="utf-8") if readme_file.exists() else ""

setup(
    name="nl2econ",
    version="0.1.0",
    description="Nightlight gravity networks, random-walk features and consumption regression",
    long_description=long_description,
    long_description_content_type="text/markdown",
    py_modules=[
        "cli",
        "communities",
        "config",
        "errors",
        "feature_builder",
        "gravity_graph",
        "grid_raster",
        "pipeline",
        "regress",
        "survey",
        "synthetic",
        "walk_engine",
    ],
    install_requires=[
        "click>=8.0.0",
        "rich>=10.0.0",
        "pyyaml>=6.0.0",
        "numpy>=1.22.0",
        "scipy>=1.8.0",
        "pandas>=1.5.0",
        "networkx>=2.8",
        "geojson>=2.5.0",
    ],
    extras_require={
        "dev": [
            "pytest>=7.0.0",
            "pytest-cov>=3.0.0",
        ]
    },
    entry_points={
        "console_scripts": [
            "nl2econ=cli:cli",
        ],
    },
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "Topic :: Scientific/Engineering :: GIS",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.8",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
    ],
    python_requires=">=3.8",
)
