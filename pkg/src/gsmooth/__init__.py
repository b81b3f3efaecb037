"""General smooth models: penalized likelihoods with smoothing parameters chosen by
Laplace approximate marginal likelihood."""

__version__ = "0.1.0"
