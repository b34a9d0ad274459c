"""Exports the desk-scale ONNX fixture corpus with golden tensors."""

from .export import export_fixture
from .recipes import BUILDERS, DEFAULT_RECIPES, Fixture, FixtureRecipe, build

__all__ = ["BUILDERS", "DEFAULT_RECIPES", "Fixture", "FixtureRecipe", "build",
           "export_fixture"]
