"""vadeers: a generative drug-sensitivity recommender.

Three coupled networks (a drug VAE whose latent prior is a
semi-supervised Gaussian mixture, a cell-line autoencoder, and a
sensitivity prediction network) trained jointly on drug embeddings,
kinase inhibition profiles, cell-line features, and sparse sensitivity
measurements.  Sampling a chosen mixture component generates drug
profiles from the matching cluster.
"""

__version__ = "0.1.0"
