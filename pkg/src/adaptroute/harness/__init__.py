"""Evaluation protocol, budget sweeps and synthetic worlds."""
