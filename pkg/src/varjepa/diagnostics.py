"""Distributional diagnostics, probes, and selective-evaluation metrics.

Everything here consumes posterior-mean embeddings or recorded forward
passes and produces plain floats, so every metric is deterministic
given the embeddings, the fixed projection set, and the probe seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp
from scipy.stats import rankdata

from .gaussian import categorical_nll, kl_diag, kl_to_standard
from .model import embed, infer_forward
from .numeric import (
    AdamWState,
    InputError,
    NumericalFailure,
    ParamStore,
    adamw_step,
    as_tensor,
    philox_stream,
)
from .sigreg import EppsPulleyConfig, sigreg

__all__ = [
    "DiagnosticsRecord",
    "DIAG_COLUMNS",
    "ProbeConfig",
    "ProbeResult",
    "SurgeryEstimate",
    "aggregated_kl",
    "cov_metrics",
    "coupling_kl",
    "sigreg_mse",
    "elbo_surgery_estimate",
    "train_linear_probe",
    "selective_accuracy",
    "risk_coverage",
    "roc_auc",
    "epoch_diagnostics",
    "write_diagnostics_csv",
    "write_curve_csv",
]


@dataclass(frozen=True)
class DiagnosticsRecord:
    """One epoch's distribution metrics for both latent spaces."""

    epoch: int
    sx_agg_kl: float
    sx_sigreg_mse: float
    sx_cov_frob_dev: float
    sx_mean_norm: float
    sy_agg_kl: float
    sy_sigreg_mse: float
    sy_cov_frob_dev: float
    sy_mean_norm: float
    coupling_kl: float
    probe_acc_sx: float
    probe_acc_sy: float

    def __post_init__(self):
        for name in DIAG_COLUMNS[1:]:
            v = getattr(self, name)
            if not math.isfinite(v):
                raise NumericalFailure(f"diagnostic '{name}' is not finite")
        for name in ("sx_agg_kl", "sx_sigreg_mse", "sx_cov_frob_dev",
                     "sx_mean_norm", "sy_agg_kl", "sy_sigreg_mse",
                     "sy_cov_frob_dev", "sy_mean_norm", "coupling_kl"):
            if getattr(self, name) < 0:
                raise NumericalFailure(f"diagnostic '{name}' is negative")


DIAG_COLUMNS = (
    "epoch",
    "sx_agg_kl", "sx_sigreg_mse", "sx_cov_frob_dev", "sx_mean_norm",
    "sy_agg_kl", "sy_sigreg_mse", "sy_cov_frob_dev", "sy_mean_norm",
    "coupling_kl", "probe_acc_sx", "probe_acc_sy",
)


def _as_2d(embeddings):
    arr = np.asarray(embeddings, dtype=np.float64)
    if arr.ndim != 2:
        raise InputError(f"embeddings must be [N, d], got shape {arr.shape}")
    return arr


def aggregated_kl(embeddings):
    """KL of the moment-matched Gaussian of the batch against N(0, I).

    0.5 * [tr(S) + |mu|^2 - logdet(S) - d] with a 1e-6 jitter on the
    empirical covariance.
    """
    arr = _as_2d(embeddings)
    n, d = arr.shape
    if n <= d:
        raise InputError(f"need more samples than dimensions (n={n}, d={d})")
    mu = arr.mean(axis=0)
    cov = np.cov(arr, rowvar=False, ddof=1)
    cov = np.atleast_2d(cov) + 1e-6 * np.eye(d)
    sign, logdet = np.linalg.slogdet(cov)
    if sign <= 0:
        raise NumericalFailure("covariance is not positive definite after jitter")
    return 0.5 * (np.trace(cov) + mu @ mu - logdet - d)


def cov_metrics(embeddings):
    """(Frobenius norm of empirical covariance minus I, norm of mean)."""
    arr = _as_2d(embeddings)
    if arr.shape[0] < 2:
        raise InputError("need at least 2 samples")
    mu = arr.mean(axis=0)
    cov = np.atleast_2d(np.cov(arr, rowvar=False, ddof=1))
    dev = np.linalg.norm(cov - np.eye(arr.shape[1]), ord="fro")
    return float(dev), float(np.linalg.norm(mu))


def coupling_kl(bundle):
    """Batch-mean KL between the target posterior and the learned prior."""
    return kl_diag(bundle.q_sy, bundle.p_sy).mean().item()


def sigreg_mse(embeddings, projections, config=None):
    """The training penalty statistic on a fixed projection set."""
    cfg = config or EppsPulleyConfig()
    emb = as_tensor(embeddings).detach()
    return sigreg(emb, projections, cfg).item()


# ---- aggregated-posterior decomposition -------------------------------


@dataclass(frozen=True)
class SurgeryEstimate:
    """Split of the mean per-sample KL into mixture KL plus information.

    per_sample_kl is closed form; the other two are Monte-Carlo with
    their standard errors. identity_se is the standard error of their
    sum, for checking per_sample_kl = agg_mixture_kl + mutual_info.
    """

    per_sample_kl: float
    agg_mixture_kl: float
    mutual_info: float
    agg_mixture_kl_se: float
    mutual_info_se: float
    identity_se: float


def _diag_log_density(points, mean, log_var):
    # points [S, d] against a bank of diagonal Gaussians [N, d] -> [S, N]
    diff = points[:, None, :] - mean[None, :, :]
    inv_var = np.exp(-log_var)[None, :, :]
    quad = (diff * diff * inv_var).sum(axis=2)
    norm = (log_var.sum(axis=1) + mean.shape[1] * math.log(2.0 * math.pi))
    return -0.5 * (quad + norm[None, :])


def elbo_surgery_estimate(posterior, samples_per_posterior, rng=None, seed=0):
    """Estimate the three terms of the aggregated-posterior split.

    `posterior` holds N diagonal Gaussians as [N, d] mean/log_var rows.
    Treating the aggregated posterior as their equal-weight mixture,
    mean-over-draws of log q(s|x_n) - log mix(s) estimates the mutual
    information and log mix(s) - log p0(s) the aggregate KL.
    """
    mean = np.asarray(posterior.mean.data, dtype=np.float64)
    log_var = np.asarray(posterior.log_var.data, dtype=np.float64)
    if mean.ndim != 2:
        raise InputError("posterior must be batched [N, d]")
    n, d = mean.shape
    s = int(samples_per_posterior)
    if n < 1 or s < 1:
        raise InputError("need at least one posterior and one draw")
    if rng is None:
        rng = philox_stream(seed, "eval")

    per_sample = kl_to_standard(posterior.detach()).mean().item()

    std = np.exp(0.5 * log_var)
    mi_draws = np.empty((n, s))
    agg_draws = np.empty((n, s))
    for i in range(n):
        draws = mean[i] + std[i] * rng.normal(size=(s, d))
        log_bank = _diag_log_density(draws, mean, log_var)
        log_q = log_bank[:, i]
        log_mix = logsumexp(log_bank, axis=1) - math.log(n)
        log_p0 = -0.5 * ((draws * draws).sum(axis=1)
                         + d * math.log(2.0 * math.pi))
        mi_draws[i] = log_q - log_mix
        agg_draws[i] = log_mix - log_p0

    total = n * s
    mi = mi_draws.mean()
    agg = agg_draws.mean()
    mi_se = mi_draws.std(ddof=1) / math.sqrt(total) if total > 1 else 0.0
    agg_se = agg_draws.std(ddof=1) / math.sqrt(total) if total > 1 else 0.0
    both = mi_draws + agg_draws
    identity_se = both.std(ddof=1) / math.sqrt(total) if total > 1 else 0.0
    return SurgeryEstimate(
        per_sample_kl=float(per_sample), agg_mixture_kl=float(agg),
        mutual_info=float(mi), agg_mixture_kl_se=float(agg_se),
        mutual_info_se=float(mi_se), identity_se=float(identity_se),
    )


# ---- linear probes -----------------------------------------------------


@dataclass(frozen=True)
class ProbeConfig:
    epochs: int = 50
    lr: float = 3e-3
    weight_decay: float = 1e-4
    batch_size: int = 512
    seed: int = 0


@dataclass
class ProbeResult:
    weights: np.ndarray
    bias: np.ndarray
    train_accuracy: float
    eval_accuracy: float
    n_classes: int
    feature_mean: np.ndarray = None
    feature_std: np.ndarray = None

    def predict(self, embeddings):
        """Class predictions under the stored standardization."""
        x = _as_2d(embeddings)
        if self.feature_mean is not None:
            x = (x - self.feature_mean) / self.feature_std
        return np.argmax(x @ self.weights + self.bias, axis=1)


def train_linear_probe(embeddings, labels, config=None):
    """Softmax regression on standardized features with a held-out split.

    The split is 80/20 from a seeded permutation; features are
    standardized with training-split statistics; prediction ties go to
    the lowest class index.
    """
    cfg = config or ProbeConfig()
    x = _as_2d(embeddings)
    y = np.asarray(labels)
    if y.ndim != 1 or y.shape[0] != x.shape[0]:
        raise InputError("labels must be [N] matching embeddings")
    y = y.astype(np.int64)
    if np.unique(y).size < 2:
        raise InputError("probe needs at least two classes present")
    n_classes = int(y.max()) + 1

    rng = philox_stream(cfg.seed, "probe")
    order = rng.permutation(x.shape[0])
    n_train = int(0.8 * x.shape[0])
    if n_train < 1 or n_train == x.shape[0]:
        raise InputError("dataset too small for an 80/20 split")
    tr, ev = order[:n_train], order[n_train:]

    mu = x[tr].mean(axis=0)
    sd = x[tr].std(axis=0, ddof=0)
    sd = np.where(sd > 0, sd, 1.0)
    x_tr = (x[tr] - mu) / sd
    x_ev = (x[ev] - mu) / sd
    y_tr, y_ev = y[tr], y[ev]

    store = ParamStore()
    w = store.add("w", np.zeros((x.shape[1], n_classes)))
    b = store.add("b", np.zeros(n_classes))
    store.freeze()
    opt = AdamWState.for_params(store, lr=cfg.lr, weight_decay=cfg.weight_decay)

    for _ in range(cfg.epochs):
        perm = rng.permutation(n_train)
        for lo in range(0, n_train, cfg.batch_size):
            idx = perm[lo : lo + cfg.batch_size]
            logits = as_tensor(x_tr[idx]).matmul(w) + b
            loss = categorical_nll(logits, y_tr[idx]).mean()
            store.zero_grad()
            loss.backward()
            grads = {
                k: (p.grad if p.grad is not None else np.zeros_like(p.data))
                for k, p in store.items()
            }
            adamw_step(store, grads, opt)

    def acc(xs, ys):
        logits = xs @ w.data + b.data
        return float(np.mean(np.argmax(logits, axis=1) == ys))

    return ProbeResult(
        weights=w.data.copy(), bias=b.data.copy(),
        train_accuracy=acc(x_tr, y_tr), eval_accuracy=acc(x_ev, y_ev),
        n_classes=n_classes, feature_mean=mu, feature_std=sd,
    )


# ---- selective evaluation ----------------------------------------------


def _kept_indices(uncertainty, n_drop):
    u = np.asarray(uncertainty, dtype=np.float64)
    if u.ndim != 1:
        raise InputError("uncertainty must be [N]")
    # Stable sort on negated values: descending by uncertainty, ties by
    # original index ascending.
    order = np.argsort(-u, kind="stable")
    return order[n_drop:]


def selective_accuracy(predictions, labels, uncertainty, drop_fraction):
    """Accuracy after discarding the most-uncertain fraction."""
    if not (0.0 <= drop_fraction < 1.0):
        raise InputError("drop_fraction must be in [0, 1)")
    pred = np.asarray(predictions)
    lab = np.asarray(labels)
    if pred.shape != lab.shape or pred.ndim != 1:
        raise InputError("predictions and labels must be matching [N]")
    n = pred.shape[0]
    k = int(np.ceil(drop_fraction * n - 1e-9))
    keep = _kept_indices(uncertainty, max(k, 0))
    if keep.size == 0:
        raise InputError("drop_fraction removes every sample")
    return float(np.mean(pred[keep] == lab[keep]))


def risk_coverage(correct_flags, uncertainty):
    """(coverage, selective accuracy) pairs from full down to 5% coverage.

    Coverage steps of 0.05; levels whose kept set would be empty are
    omitted.
    """
    flags = np.asarray(correct_flags, dtype=np.float64)
    if flags.ndim != 1 or flags.size < 1:
        raise InputError("correct_flags must be nonempty [N]")
    n = flags.size
    curve = []
    for i in range(20):
        coverage = round((20 - i) * 0.05, 2)
        kept_n = int(np.floor(coverage * n + 1e-9))
        if kept_n < 1:
            continue
        keep = _kept_indices(uncertainty, n - kept_n)
        curve.append((coverage, float(flags[keep].mean())))
    return curve


def roc_auc(scores, positive_flags):
    """Rank-based area under the ROC curve, ties counting one half."""
    s = np.asarray(scores, dtype=np.float64)
    f = np.asarray(positive_flags).astype(bool)
    if s.shape != f.shape or s.ndim != 1:
        raise InputError("scores and flags must be matching [N]")
    n_pos = int(f.sum())
    n_neg = int((~f).sum())
    if n_pos == 0 or n_neg == 0:
        raise InputError("need both classes present")
    ranks = rankdata(s)
    u = ranks[f].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


# ---- per-epoch rollup ---------------------------------------------------


def epoch_diagnostics(model, dataset, projections, epoch=0, probe_config=None,
                      ep_config=None):
    """All record fields from one deterministic pass over a dataset.

    Embeddings are posterior means; the penalty statistic uses the
    fixed projection set so epochs are comparable; probes predict the
    mixture component from each latent separately.
    """
    sx_mean, _, sy_mean, _ = embed(model, dataset.x, dataset.y)
    n = dataset.n
    zero = (np.zeros((n, model.d_s)), np.zeros((n, model.d_z)),
            np.zeros((n, model.d_s)))
    bundle = infer_forward(model, dataset.x, dataset.y, zero)

    sx_frob, sx_norm = cov_metrics(sx_mean)
    sy_frob, sy_norm = cov_metrics(sy_mean)
    probe_x = train_linear_probe(sx_mean, dataset.c, probe_config)
    probe_y = train_linear_probe(sy_mean, dataset.c, probe_config)

    return DiagnosticsRecord(
        epoch=epoch,
        sx_agg_kl=float(aggregated_kl(sx_mean)),
        sx_sigreg_mse=sigreg_mse(sx_mean, projections, ep_config),
        sx_cov_frob_dev=sx_frob,
        sx_mean_norm=sx_norm,
        sy_agg_kl=float(aggregated_kl(sy_mean)),
        sy_sigreg_mse=sigreg_mse(sy_mean, projections, ep_config),
        sy_cov_frob_dev=sy_frob,
        sy_mean_norm=sy_norm,
        coupling_kl=coupling_kl(bundle),
        probe_acc_sx=probe_x.eval_accuracy,
        probe_acc_sy=probe_y.eval_accuracy,
    )


def write_diagnostics_csv(records, path):
    lines = [",".join(DIAG_COLUMNS)]
    for rec in records:
        cells = [str(rec.epoch)]
        cells += [repr(float(getattr(rec, c))) for c in DIAG_COLUMNS[1:]]
        lines.append(",".join(cells))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def write_curve_csv(pairs, path, header=("coverage", "accuracy")):
    lines = [",".join(header)]
    for a, b in pairs:
        lines.append(f"{repr(float(a))},{repr(float(b))}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
