"""Large solutions of semilinear equations for subordinate Brownian motion generators."""

__version__ = "0.1.0"
