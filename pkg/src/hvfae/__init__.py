"""Fair latent representations with variational fair auto-encoders."""

__version__ = "0.1.0"
