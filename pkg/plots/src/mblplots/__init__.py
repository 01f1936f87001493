"""Figure scripts for the mini-batch Langevin experiment outputs.

This package only reads the CSV/JSON files written by the ``mblangevin``
command line driver; it never imports the sampler library itself, so the
sampler test suite runs without any plotting dependencies installed.
"""

__version__ = "0.1.0"

from .figures import FigureRecipe, RecipeError, render  # noqa: F401
