"""Numerical building blocks: autodiff, layers, optimiser and gradient checking."""
