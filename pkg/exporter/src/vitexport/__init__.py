"""vitexport: one-shot checkpoint converter and golden-fixture generator."""

__version__ = "0.1.0"
