"""Typed stochastic diagrams: Markov kernels, slotwise composition, colored
wiring, co-indexed transport and gradients of expected objectives."""

__version__ = "0.1.0"
