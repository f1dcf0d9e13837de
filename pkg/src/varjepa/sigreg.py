"""Sketched isotropic-Gaussian regularization.

Embeddings are projected onto random unit directions and each projected
sample is compared to a standard normal through its empirical
characteristic function on a fixed frequency grid. The statistic is the
squared CF discrepancy averaged over frequencies (optionally weighted
by the standard-normal CF), then averaged over directions.

The same computation serves as the differentiable training penalty and,
with a frozen ProjectionSet, as the epoch-wise distribution diagnostic,
so penalty and measurement can never drift apart.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numeric import InputError, Tensor, as_tensor

__all__ = [
    "ProjectionSet",
    "EppsPulleyConfig",
    "frequency_grid",
    "sample_directions",
    "epps_pulley_stat",
    "sigreg",
]

# Direction chunking bound: keeps the [N, chunk, F] angle array around
# 64 MB of float64 regardless of sample count.
_MAX_ANGLE_ELEMENTS = 8_000_000


@dataclass(frozen=True)
class EppsPulleyConfig:
    """Frequency grid for the characteristic-function discrepancy.

    n_frequencies points equally spaced on (0, max_frequency]. With
    weighting="gauss" the per-frequency terms are averaged under the
    standard-normal CF weight instead of uniformly.
    """

    n_frequencies: int = 64
    max_frequency: float = 5.0
    weighting: str = "none"

    def __post_init__(self):
        if self.n_frequencies < 1:
            raise InputError("n_frequencies must be >= 1")
        if not self.max_frequency > 0:
            raise InputError("max_frequency must be > 0")
        if self.weighting not in ("none", "gauss"):
            raise InputError(f"unknown weighting '{self.weighting}'")


class ProjectionSet:
    """A bank of unit-norm directions plus the seed that produced it."""

    __slots__ = ("directions", "seed")

    def __init__(self, directions, seed=None):
        directions = np.asarray(directions, dtype=np.float64)
        if directions.ndim != 2:
            raise InputError("directions must be [M, d]")
        norms = np.linalg.norm(directions, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-12):
            raise InputError("directions must have unit norm")
        self.directions = directions
        self.seed = seed

    @property
    def n_directions(self):
        return self.directions.shape[0]

    @property
    def dim(self):
        return self.directions.shape[1]


def sample_directions(rng, M, d):
    """M independent standard-normal vectors in R^d, normalized to unit length."""
    if M < 1 or d < 1:
        raise InputError("M and d must be >= 1")
    seed = None
    if isinstance(rng, (int, np.integer)):
        seed = int(rng)
        rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(M, d))
    norms = np.linalg.norm(dirs, axis=1, keepdims=True)
    while np.any(norms < 1e-12):
        bad = norms[:, 0] < 1e-12
        dirs[bad] = rng.normal(size=(int(bad.sum()), d))
        norms = np.linalg.norm(dirs, axis=1, keepdims=True)
    return ProjectionSet(dirs / norms, seed=seed)


def frequency_grid(cfg):
    """Grid points t_1..t_F on (0, max_frequency] and their averaging weights."""
    j = np.arange(1, cfg.n_frequencies + 1, dtype=np.float64)
    t = cfg.max_frequency * j / cfg.n_frequencies
    if cfg.weighting == "gauss":
        w = np.exp(-0.5 * t * t)
        w /= w.sum()
    else:
        w = np.full(cfg.n_frequencies, 1.0 / cfg.n_frequencies)
    return t, w


def _cf_discrepancy(values, t, w):
    """Weighted mean over t of |ecf(values)(t) - exp(-t^2/2)|^2.

    values: Tensor [N] or [N, m] (m independent sample sets side by side).
    Returns a Tensor: scalar for 1-D input, [m] for 2-D.
    """
    squeeze = values.ndim == 1
    if squeeze:
        values = values.reshape(values.shape[0], 1)
    N, m = values.shape
    ang = values.reshape(N, m, 1) * Tensor(t.reshape(1, 1, -1))
    target = Tensor(np.exp(-0.5 * t * t))
    cos_dev = ang.cos().mean(axis=0) - target
    sin_part = ang.sin().mean(axis=0)
    dev = cos_dev.square() + sin_part.square()
    stat = (dev * Tensor(w)).sum(axis=-1)
    return stat.reshape(()) if squeeze else stat


def epps_pulley_stat(proj_values, cfg):
    """CF discrepancy of one univariate sample against N(0, 1).

    Returns a scalar Tensor, differentiable in proj_values; use .item()
    for the plain number.
    """
    v = as_tensor(proj_values)
    if v.ndim != 1:
        raise InputError("proj_values must be a 1-D sample")
    if v.shape[0] < 2:
        raise InputError("need at least 2 samples")
    t, w = frequency_grid(cfg)
    return _cf_discrepancy(v, t, w)


def sigreg(embeddings, proj, cfg):
    """Mean CF discrepancy of an [N, d] batch over the projection bank.

    Differentiable in the embeddings; directions are constants. Work is
    chunked over directions so memory stays bounded for large N.
    """
    emb = as_tensor(embeddings)
    if emb.ndim != 2:
        raise InputError("embeddings must be [N, d]")
    N, d = emb.shape
    if N < 2:
        raise InputError("need at least 2 samples")
    if d != proj.dim:
        raise InputError(f"embedding dim {d} != projection dim {proj.dim}")
    t, w = frequency_grid(cfg)
    M = proj.n_directions
    chunk = max(1, _MAX_ANGLE_ELEMENTS // max(1, N * t.size))
    total = None
    for lo in range(0, M, chunk):
        sub = proj.directions[lo:lo + chunk]
        vals = emb.matmul(Tensor(sub.T))
        part = _cf_discrepancy(vals, t, w).sum()
        total = part if total is None else total + part
    return total * (1.0 / M)
