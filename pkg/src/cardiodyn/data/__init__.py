"""Bundled model-definition JSON files."""
