"""Finite element solver for a two-scale reaction-diffusion system with
microstructures that vary from one macroscopic point to the next."""

from __future__ import annotations

__version__ = "0.1.0"
