"""Mean-field Langevin laboratory: covariance-aware training of two-layer
networks on synthetic multi-index tasks, with Euclidean and spherical dynamics
and log-Sobolev diagnostics."""

__version__ = "0.1.0"
