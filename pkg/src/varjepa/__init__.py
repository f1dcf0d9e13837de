"""Coupled latent-variable model with a learned conditional prior.

Modules:
    numeric      float64 autodiff tensors, MLPs, AdamW
    gaussian     diagonal-Gaussian kernels (sampling, likelihoods, KLs)
    sigreg       sketched isotropic-Gaussian regularization
    model        the six-network latent-variable model
    objective    five-term loss, annealing, training loop
    datagen      synthetic paired/tabular data generators
    diagnostics  distribution metrics, probes, selective evaluation
    tabular      feature-masked variant with per-feature decoders
    cli          command-line entry points
"""

__version__ = "0.1.0"
