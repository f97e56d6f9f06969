"""Random walks in divergence-free random drift fields on the torus."""

__version__ = "0.1.0"
