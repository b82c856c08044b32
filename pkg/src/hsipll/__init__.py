"""Superpixelwise low-rank denoising with partial-label disambiguation for HSI."""

__version__ = "0.1.0"
