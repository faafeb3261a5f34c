"""Conditional GANs with a projection discriminator, built on a small numpy autodiff engine."""

__version__ = "0.1.0"
