"""Photonic quantum-train: CNN weights generated by simulated linear-optical circuits and an MPS mapping."""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source checkout
    __version__ = "0.1.0"
