"""Dual Dash/Dot diffusion sampling with exact Gaussian oracles and a toy benchmark harness."""

__version__ = "0.1.0"
