#!/usr/bin/env python
from setuptools import setup
import os.path

requirements = ["numpy",
                "scipy",
                "pandas",
                "pyyaml",
                "omegaconf",
                "click",
                "pydantic",
                "pytest",
                "rich",
                ]

PACKAGE_NAME = "armcmc"

__version__ = "0.3.0"
build_root = os.path.dirname(__file__)


def readme():
    """Get readme content for package long description"""
    with open(os.path.join(build_root, 'README.md')) as f:
        return f.read()

setup(name=PACKAGE_NAME,
      version=__version__,
      description="Online parameter identification with adaptive recursive MCMC, RLS and particle filter baselines",
      long_description=readme(),
      long_description_content_type="text/markdown",
      packages=["armcmc"],
      package_data={"armcmc": ["presets/*.yml"]},
      install_requires=requirements,
      extras_require={"test": ["filterpy"]},
      entry_points={"console_scripts": ["armcmc = armcmc.cli:cli"]},
      scripts=[],
      classifiers=[],
      )
