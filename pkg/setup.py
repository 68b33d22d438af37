# Based on setup.py master example at https://github.com/pypa/sampleproject/blob/master/setup.py

from io import open
from os import path

from setuptools import setup, find_packages

import h2xlda

here = path.abspath(path.dirname(__file__))

# Get the long description from the README file
with open(path.join(here, "README.md"), encoding="utf-8") as f:
    long_description = f.read()

setup(
    name="h2-xlda",
    version=h2xlda.__version__,
    description="Finite-element SCF, stability analysis and continuation for the spin-polarized XLDA model of H2.",
    long_description=long_description,
    long_description_content_type="text/markdown",
    url=h2xlda.__url__,
    author=h2xlda.__author__,
    # For a list of valid classifiers, see https://pypi.org/classifiers/
    classifiers=[
        "Development Status :: 4 - Beta",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: BSD License",
        "Programming Language :: Python :: 3.8",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Environment :: Console",
        "Operating System :: OS Independent",
        "Topic :: Scientific/Engineering :: Chemistry",
        "Topic :: Scientific/Engineering :: Physics",
    ],
    keywords="density functional theory finite element symmetry breaking bifurcation hydrogen",
    packages=find_packages(),  # Finds modules with an __init__.py
    include_package_data=True,  # Pulls in non-module data from MANIFEST.in
    package_data={"h2xlda": ["data/*.json"]},
    python_requires=">=3.8",
    install_requires=["numpy>=1.20", "scipy>=1.8", "PyYAML>=5.4"],
    extras_require={
        "fast": ["numba>=0.55"],
        "test": ["pytest>=6"],
        "docs": ["mkdocs"],
    },
    entry_points={"console_scripts": ["h2xlda=h2xlda.cli:main"]},
    project_urls={
        "Bug Reports": h2xlda.__url__ + "/issues",
        "Source": h2xlda.__url__,
    },
)
