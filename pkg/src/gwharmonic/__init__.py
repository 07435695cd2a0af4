"""Harmonic measure, conductances and distributional fixed points on
critical stable Galton-Watson trees."""

from . import cli, contree, electric, gwtree, offspring, rde, streams

__all__ = ["cli", "contree", "electric", "gwtree", "offspring", "rde", "streams"]
__version__ = "0.1.0"
