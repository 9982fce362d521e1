"""Core package for Verifica: signal processing, network, scoring and metrics."""
