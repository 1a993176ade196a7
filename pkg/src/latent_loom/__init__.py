"""latent-loom: interactive data annotation in the latent space of a
semi-supervised variational autoencoder."""

__version__ = "0.1.0"
