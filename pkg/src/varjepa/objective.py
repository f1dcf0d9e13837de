"""Five-term loss, annealing schedules, ablation variants, training loop.

The loss combines reconstruction of the context observation, generation
of the target observation, two KLs against standard-normal priors, and
the coupling KL between the target posterior and the predictor. Each
weight can be annealed. Ablation variants A-J toggle weights on or off
and optionally add the sketched isotropic-Gaussian penalty on either
latent batch.

Training is plain minibatch AdamW with per-epoch reshuffling; all
randomness (init, shuffling, reparameterization noise, penalty
directions) comes from named streams of the run seed, so identical
configs produce identical loss sequences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .gaussian import gaussian_nll, kl_diag, kl_to_standard
from .model import build_model, infer_forward
from .numeric import (
    AdamWState,
    InputError,
    NumericalFailure,
    adamw_step,
    as_tensor,
    philox_stream,
)
from .sigreg import EppsPulleyConfig, sample_directions, sigreg

__all__ = [
    "LossWeights",
    "AnnealSchedule",
    "LossBreakdown",
    "VariantConfig",
    "SigregSettings",
    "VARIANT_IDS",
    "variant_config",
    "anneal_weight",
    "effective_weights",
    "elbo_terms",
    "elbo_loss",
    "jepa_baseline_loss",
    "TrainResult",
    "train_run",
    "write_losses_csv",
    "LOSS_COLUMNS",
]


@dataclass(frozen=True)
class LossWeights:
    """Multipliers for the five loss terms and the two penalty strengths."""

    alpha_rec: float = 1.0
    alpha_gen: float = 1.0
    alpha_kl_sx: float = 1.0
    alpha_kl_z: float = 1.0
    alpha_kl_sy: float = 1.0
    lambda_sx: float = 0.0
    lambda_sy: float = 0.0

    def __post_init__(self):
        for name in ("alpha_rec", "alpha_gen", "alpha_kl_sx", "alpha_kl_z",
                     "alpha_kl_sy", "lambda_sx", "lambda_sy"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0.0):
                raise InputError(f"{name} must be finite and nonnegative")


@dataclass(frozen=True)
class AnnealSchedule:
    """Linear ramp from 0 to final_weight over anneal_steps after start_step."""

    final_weight: float
    anneal_steps: int = 0
    start_step: int = 0

    def __post_init__(self):
        if self.anneal_steps < 0 or self.start_step < 0:
            raise InputError("anneal_steps and start_step must be >= 0")


def anneal_weight(schedule, t):
    """Weight at optimizer step t.

    final * min(max(t - start, 0) / anneal_steps, 1); a zero-length ramp
    is a step function at start_step.
    """
    if t < 0:
        raise InputError("t must be >= 0")
    offset = t - schedule.start_step
    if schedule.anneal_steps == 0:
        frac = 1.0 if offset >= 0 else 0.0
    else:
        frac = min(max(offset, 0) / schedule.anneal_steps, 1.0)
    return schedule.final_weight * frac


@dataclass(frozen=True)
class LossBreakdown:
    """Unweighted term values plus the weighted total for one batch."""

    rec: float
    gen: float
    kl_sx: float
    kl_z: float
    kl_sy: float
    sigreg_sx: float
    sigreg_sy: float
    total: float

    def recombine(self, weights):
        """Weighted sum of the stored components under `weights`."""
        return (
            weights.alpha_rec * self.rec
            + weights.alpha_gen * self.gen
            + weights.alpha_kl_sx * self.kl_sx
            + weights.alpha_kl_z * self.kl_z
            + weights.alpha_kl_sy * self.kl_sy
            + weights.lambda_sx * self.sigreg_sx
            + weights.lambda_sy * self.sigreg_sy
        )


@dataclass(frozen=True)
class SigregSettings:
    """Direction count and frequency grid for the training penalty."""

    n_directions: int = 64
    n_frequencies: int = 64
    max_frequency: float = 5.0
    weighting: str = "none"

    def ep_config(self):
        return EppsPulleyConfig(
            n_frequencies=self.n_frequencies,
            max_frequency=self.max_frequency,
            weighting=self.weighting,
        )


VARIANT_IDS = "ABCDEFGHIJ"

_VARIANT_OVERRIDES = {
    "A": {},
    "B": {"lambda_sx": 10.0},
    "C": {"lambda_sy": 10.0},
    "D": {"lambda_sx": 10.0, "lambda_sy": 10.0},
    "E": {"alpha_kl_sx": 0.0},
    "F": {"alpha_kl_sy": 0.0},
    "G": {"alpha_rec": 0.0, "alpha_gen": 0.0},
    "H": {"alpha_rec": 0.0, "alpha_gen": 0.0, "lambda_sx": 10.0,
          "lambda_sy": 10.0},
    "I": {"alpha_kl_sx": 0.0, "alpha_kl_z": 0.0, "alpha_kl_sy": 0.0},
    "J": {"alpha_kl_sx": 0.0, "alpha_kl_z": 0.0, "alpha_kl_sy": 0.0,
          "lambda_sx": 10.0, "lambda_sy": 10.0},
}


@dataclass(frozen=True)
class VariantConfig:
    """Everything that identifies one training run."""

    variant: str = "A"
    weights: LossWeights = field(default_factory=LossWeights)
    anneal_kl_sx: AnnealSchedule | None = None
    anneal_kl_z: AnnealSchedule | None = None
    anneal_kl_sy: AnnealSchedule | None = None
    lr: float = 1e-3
    weight_decay: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 40
    batch_size: int = 512
    seed: int = 0
    d_s: int = 16
    d_z: int = 8
    hidden: tuple = (128, 128)
    activation: str = "gelu"

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise InputError("epochs must be >= 0 and batch_size >= 1")


def variant_config(variant, seed=0, **overrides):
    """Build the config for one of the named ablation variants."""
    variant = variant.upper()
    if variant not in _VARIANT_OVERRIDES:
        raise InputError(f"unknown variant '{variant}' (expected one of {VARIANT_IDS})")
    weights = LossWeights(**_VARIANT_OVERRIDES[variant])
    if "weights" in overrides:
        weights = overrides.pop("weights")
    return VariantConfig(variant=variant, weights=weights, seed=seed, **overrides)


def effective_weights(config, t):
    """Loss weights at optimizer step t with any annealing applied."""
    w = config.weights
    updates = {}
    for name, sched in (
        ("alpha_kl_sx", config.anneal_kl_sx),
        ("alpha_kl_z", config.anneal_kl_z),
        ("alpha_kl_sy", config.anneal_kl_sy),
    ):
        if sched is not None:
            updates[name] = anneal_weight(sched, t)
    return replace(w, **updates) if updates else w


def _term(name, fn):
    try:
        return fn()
    except NumericalFailure as err:
        raise NumericalFailure(f"loss term '{name}': {err}") from err


def elbo_terms(model, bundle, x, y):
    """The five unweighted loss terms as scalar graph nodes."""
    x = as_tensor(x)
    y = as_tensor(y)
    rec = _term("rec", lambda: gaussian_nll(
        x, model.net("dcx", bundle.s_x), model.obs_var("x")).mean())
    gen = _term("gen", lambda: gaussian_nll(
        y, model.net("dcy", bundle.s_y), model.obs_var("y")).mean())
    kl_sx = _term("kl_sx", lambda: kl_to_standard(bundle.q_sx).mean())
    kl_z = _term("kl_z", lambda: kl_to_standard(bundle.q_z).mean())
    kl_sy = _term("kl_sy", lambda: kl_diag(bundle.q_sy, bundle.p_sy).mean())
    return {"rec": rec, "gen": gen, "kl_sx": kl_sx, "kl_z": kl_z, "kl_sy": kl_sy}


def _weighted_total(terms, weights, sig_sx=None, sig_sy=None):
    total = (
        weights.alpha_rec * terms["rec"]
        + weights.alpha_gen * terms["gen"]
        + weights.alpha_kl_sx * terms["kl_sx"]
        + weights.alpha_kl_z * terms["kl_z"]
        + weights.alpha_kl_sy * terms["kl_sy"]
    )
    if sig_sx is not None:
        total = total + weights.lambda_sx * sig_sx
    if sig_sy is not None:
        total = total + weights.lambda_sy * sig_sy
    return total


def elbo_loss(model, bundle, x, y, weights):
    """Evaluate the five-term breakdown for one batch (no penalty terms)."""
    terms = elbo_terms(model, bundle, x, y)
    total = _weighted_total(terms, weights)
    return LossBreakdown(
        rec=terms["rec"].item(), gen=terms["gen"].item(),
        kl_sx=terms["kl_sx"].item(), kl_z=terms["kl_z"].item(),
        kl_sy=terms["kl_sy"].item(), sigreg_sx=0.0, sigreg_sy=0.0,
        total=total.item(),
    )


def jepa_baseline_loss(predicted, target):
    """Mean squared prediction error with the target held constant.

    Per sample the squared Euclidean distance over the latent dimension,
    averaged over the batch; gradients flow only into `predicted`.
    """
    predicted = as_tensor(predicted)
    target = as_tensor(target).detach()
    if predicted.shape != target.shape:
        raise InputError("predicted and target must have equal shapes")
    return (predicted - target).square().sum(axis=-1).mean()


@dataclass
class TrainResult:
    model: object
    records: list
    loss_rows: list
    steps: int


LOSS_COLUMNS = ("epoch", "step", "rec", "gen", "kl_sx", "kl_z", "kl_sy",
                "sigreg_sx", "sigreg_sy", "total")


def train_run(config, dataset, sigreg_settings=None, hook=None):
    """Train one model on an observation-pair dataset.

    Per batch: stochastic forward pass, five-term loss with the step's
    annealed weights, optional penalty on each latent batch with fresh
    directions, backward, AdamW. The hook runs after every epoch and
    may return a diagnostics record (or None to skip).
    """
    if dataset.n < 1:
        raise InputError("dataset is empty")
    sig = sigreg_settings or SigregSettings()
    ep_cfg = sig.ep_config()

    init_rng = philox_stream(config.seed, "init")
    noise_rng = philox_stream(config.seed, "noise")
    shuffle_rng = philox_stream(config.seed, "shuffle")
    proj_rng = philox_stream(config.seed, "proj")

    model = build_model(
        dataset.d_obs, config.d_s, config.d_z, rng=init_rng,
        hidden=config.hidden, activation=config.activation,
    )
    opt = AdamWState.for_params(
        model.params, lr=config.lr, weight_decay=config.weight_decay,
        beta1=config.beta1, beta2=config.beta2, eps=config.eps,
    )

    x_all, y_all = dataset.x, dataset.y
    n = dataset.n
    records = []
    loss_rows = []
    t = 0

    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(n)
        for lo in range(0, n, config.batch_size):
            batch = order[lo : lo + config.batch_size]
            xb, yb = x_all[batch], y_all[batch]
            b = len(batch)
            noise = (
                noise_rng.normal(size=(b, config.d_s)),
                noise_rng.normal(size=(b, config.d_z)),
                noise_rng.normal(size=(b, config.d_s)),
            )
            w_t = effective_weights(config, t)
            try:
                bundle = infer_forward(model, xb, yb, noise)
                terms = elbo_terms(model, bundle, xb, yb)
                sig_sx = sig_sy = None
                if w_t.lambda_sx > 0:
                    dirs = sample_directions(proj_rng, sig.n_directions, config.d_s)
                    sig_sx = _term("sigreg_sx",
                                   lambda: sigreg(bundle.s_x, dirs, ep_cfg))
                if w_t.lambda_sy > 0:
                    dirs = sample_directions(proj_rng, sig.n_directions, config.d_s)
                    sig_sy = _term("sigreg_sy",
                                   lambda: sigreg(bundle.s_y, dirs, ep_cfg))
                total = _weighted_total(terms, w_t, sig_sx, sig_sy)
            except NumericalFailure as err:
                raise NumericalFailure(
                    f"epoch {epoch}, batch {lo // config.batch_size}: {err}"
                ) from err

            model.params.zero_grad()
            total.backward()
            grads = {
                name: (p.grad if p.grad is not None else np.zeros_like(p.data))
                for name, p in model.params.items()
            }
            adamw_step(model.params, grads, opt)
            t += 1

            loss_rows.append({
                "epoch": epoch,
                "step": t,
                "rec": terms["rec"].item(),
                "gen": terms["gen"].item(),
                "kl_sx": terms["kl_sx"].item(),
                "kl_z": terms["kl_z"].item(),
                "kl_sy": terms["kl_sy"].item(),
                "sigreg_sx": sig_sx.item() if sig_sx is not None else 0.0,
                "sigreg_sy": sig_sy.item() if sig_sy is not None else 0.0,
                "total": total.item(),
            })

        if hook is not None:
            rec = hook(model, epoch)
            if rec is not None:
                records.append(rec)

    return TrainResult(model=model, records=records, loss_rows=loss_rows, steps=t)


def _fmt(value):
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_losses_csv(rows, path):
    """Write per-batch loss rows with shortest round-trip float formatting."""
    lines = [",".join(LOSS_COLUMNS)]
    for row in rows:
        lines.append(",".join(_fmt(row[c]) for c in LOSS_COLUMNS))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
