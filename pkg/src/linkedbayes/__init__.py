"""Composable probabilistic modules linked by MP, SIR and MH connectors."""

__version__ = "0.1.0"
