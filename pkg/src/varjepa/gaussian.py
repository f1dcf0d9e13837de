"""Diagonal-Gaussian kernels: sampling, likelihoods, closed-form KLs.

Every latent in the model is a diagonal Gaussian parameterized by mean
and log-variance. Networks emit log-variance so optimization stays
unconstrained; values are clamped to [-8, 8] at construction, which
bounds the variance to [e^-8, e^8] and keeps every downstream kernel
finite.

All kernels accept batched inputs with the latent dimension last and
reduce over that last axis, returning one value per leading index.
They are built from autodiff primitives, so gradients flow through
means, log-variances, and (for the likelihoods) observations.
"""

from __future__ import annotations

import numpy as np

from .numeric import InputError, Tensor, as_tensor

__all__ = [
    "LOG_VAR_MIN",
    "LOG_VAR_MAX",
    "DiagGaussian",
    "reparam_sample",
    "kl_to_standard",
    "kl_diag",
    "gaussian_nll",
    "categorical_nll",
]

LOG_VAR_MIN = -8.0
LOG_VAR_MAX = 8.0

_LOG_2PI = float(np.log(2.0 * np.pi))


class DiagGaussian:
    """Mean and log-variance of an axis-aligned Gaussian.

    Accepts [d] vectors or [..., d] batches; mean and log_var must have
    identical shapes. The log-variance is clamped on construction.
    """

    __slots__ = ("mean", "log_var")

    def __init__(self, mean, log_var):
        mean = as_tensor(mean)
        log_var = as_tensor(log_var)
        if mean.shape != log_var.shape:
            raise InputError(
                f"mean shape {mean.shape} != log_var shape {log_var.shape}"
            )
        self.mean = mean
        self.log_var = log_var.clamp(LOG_VAR_MIN, LOG_VAR_MAX)

    @property
    def dim(self):
        return self.mean.shape[-1]

    def std(self):
        return (self.log_var * 0.5).exp()

    def detach(self):
        return DiagGaussian(self.mean.detach(), self.log_var.detach())


def reparam_sample(g, noise):
    """Deterministic sample mean + exp(log_var/2) * noise.

    Differentiable in the distribution parameters; noise is a constant.
    """
    noise = as_tensor(noise).detach()
    if noise.shape != g.mean.shape:
        raise InputError(f"noise shape {noise.shape} != mean shape {g.mean.shape}")
    return g.mean + g.std() * noise


def kl_to_standard(g):
    """KL(g || N(0, I)), summed over the last axis.

    Per dimension: (sigma^2 + mu^2 - log sigma^2 - 1) / 2.
    """
    term = g.log_var.exp() + g.mean.square() - g.log_var - 1.0
    return term.sum(axis=-1) * 0.5


def kl_diag(q, p):
    """KL(q || p) between diagonal Gaussians, summed over the last axis."""
    if q.mean.shape != p.mean.shape:
        raise InputError("kl_diag requires equal shapes")
    dlv = q.log_var - p.log_var
    ratio = dlv.exp()
    maha = (p.mean - q.mean).square() * (-p.log_var).exp()
    term = ratio + maha - dlv - 1.0
    return term.sum(axis=-1) * 0.5


def gaussian_nll(x, mean, variance):
    """Negative log density of x under N(mean, variance * I or diag(variance)).

    variance may be a positive scalar, a per-dimension vector, or a
    Tensor (for a learnable global noise level); it broadcasts against
    the residuals. Returns the sum over the last axis.
    """
    x = as_tensor(x)
    mean = as_tensor(mean)
    if isinstance(variance, Tensor):
        var = variance
        if np.any(var.data <= 0):
            raise InputError("variance must be positive")
    else:
        var_arr = np.asarray(variance, dtype=np.float64)
        if np.any(var_arr <= 0):
            raise InputError("variance must be positive")
        var = Tensor(var_arr)
    sq = (x - mean).square() / var
    log_term = var.log() + _LOG_2PI
    return ((sq + log_term) * 0.5).sum(axis=-1)


def categorical_nll(logits, true_class):
    """Cross-entropy -log softmax(logits)[true_class], log-sum-exp stabilized.

    logits: [C] or [N, C]; true_class: int or [N] int array.
    """
    logits = as_tensor(logits)
    if logits.ndim == 1:
        idx = np.asarray([int(true_class)])
        mat = logits.reshape(1, logits.shape[0])
        squeeze = True
    else:
        idx = np.asarray(true_class, dtype=np.int64)
        if idx.ndim != 1 or idx.shape[0] != logits.shape[0]:
            raise InputError("true_class must align with the logits batch")
        mat = logits
        squeeze = False
    C = mat.shape[1]
    if np.any(idx < 0) or np.any(idx >= C):
        raise InputError(f"class index out of range [0, {C})")
    nll = mat.logsumexp(axis=-1) - mat.gather_last(idx)
    if squeeze:
        return nll.reshape(())
    return nll
