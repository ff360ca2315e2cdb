"""Unit-complex latent GAN laboratory."""
