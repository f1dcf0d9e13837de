"""Feature-masked variant for mixed numeric/categorical rows.

Context features are encoded with absent entries zeroed plus a
presence channel; a shared trunk feeds per-feature Gaussian heads, and
per-feature decoders emit a scalar mean for numeric columns and logits
for categorical ones. The per-sample loss terms are averaged with
mask-aware normalizations: reconstruction and the context KL over the
M_ctx context features, generation over all D features, the coupling
KL over the K * M_trg masked target slots.

Embeddings for downstream use are target-posterior means with a
per-sample uncertainty aggregated from the posterior standard
deviations (mean or a nearest-rank 90th percentile).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from types import SimpleNamespace

import numpy as np

from .gaussian import (
    DiagGaussian,
    categorical_nll,
    gaussian_nll,
    kl_diag,
    kl_to_standard,
    reparam_sample,
)
from .model import read_checkpoint, write_checkpoint
from .numeric import (
    AdamWState,
    InputError,
    MlpSpec,
    NumericalFailure,
    ParamStore,
    adamw_step,
    as_tensor,
    concat,
    init_mlp_params,
    mlp_forward,
    philox_stream,
)
from .objective import LossBreakdown, LossWeights, AnnealSchedule, effective_weights
from .diagnostics import selective_accuracy, train_linear_probe

__all__ = [
    "FeatureSchema",
    "MaskPair",
    "TabularConfig",
    "TabularModel",
    "TabularBundle",
    "TabularTrainResult",
    "ProbeRecord",
    "collate_masks",
    "build_tabular_model",
    "tabular_forward",
    "tabular_terms",
    "tabular_losses",
    "train_tabular",
    "extract_embeddings_uncertainty",
    "nearest_rank_p90",
    "write_embeddings_csv",
    "save_tabular_checkpoint",
    "load_tabular_checkpoint",
]


@dataclass(frozen=True)
class FeatureSchema:
    """Column kinds in dataset order: all numeric columns, then categorical."""

    n_numeric: int
    cardinalities: tuple

    def __post_init__(self):
        if self.n_numeric < 0 or self.d_feat < 1:
            raise InputError("schema needs at least one feature")
        if any(c < 2 for c in self.cardinalities):
            raise InputError("categorical cardinalities must be >= 2")

    @property
    def n_categorical(self):
        return len(self.cardinalities)

    @property
    def d_feat(self):
        return self.n_numeric + self.n_categorical

    @property
    def onehot_width(self):
        return int(sum(self.cardinalities))

    @classmethod
    def from_dataset(cls, dataset):
        return cls(n_numeric=dataset.numeric.shape[1],
                   cardinalities=tuple(int(c) for c in dataset.cardinalities))


@dataclass(frozen=True)
class MaskPair:
    """One context index set and K disjoint target index sets."""

    context: tuple
    targets: tuple

    @property
    def m_ctx(self):
        return len(self.context)

    @property
    def m_trg(self):
        return len(self.targets[0])


def collate_masks(d_feat, ratios, k, rng, max_retries=64):
    """Sample one context mask and K target masks for a batch.

    Sizes are drawn once per call from U[floor(D*r_min), floor(D*r_max)]
    (at least 1); the index sets are uniform without replacement, every
    target disjoint from the context. Size pairs that cannot fit are
    redrawn up to max_retries.
    """
    r_ctx_min, r_ctx_max, r_trg_min, r_trg_max = ratios
    for r in ratios:
        if not (0.0 <= r <= 1.0):
            raise InputError("mask ratios must lie in [0, 1]")
    if r_ctx_min > r_ctx_max or r_trg_min > r_trg_max:
        raise InputError("mask ratio bounds are inverted")
    if k < 1:
        raise InputError("need at least one target mask")

    ctx_lo = max(1, int(d_feat * r_ctx_min))
    ctx_hi = max(ctx_lo, int(d_feat * r_ctx_max))
    trg_lo = max(1, int(d_feat * r_trg_min))
    trg_hi = max(trg_lo, int(d_feat * r_trg_max))
    if ctx_lo + trg_lo > d_feat:
        raise InputError("minimum mask sizes already exceed the feature count")

    for _ in range(max_retries):
        m_ctx = int(rng.integers(ctx_lo, ctx_hi + 1))
        m_trg = int(rng.integers(trg_lo, trg_hi + 1))
        if m_ctx + m_trg <= d_feat:
            break
    else:
        raise InputError("could not sample feasible mask sizes")

    context = np.sort(rng.choice(d_feat, size=m_ctx, replace=False))
    remaining = np.setdiff1d(np.arange(d_feat), context)
    targets = tuple(
        tuple(int(j) for j in np.sort(rng.choice(remaining, size=m_trg,
                                                 replace=False)))
        for _ in range(k)
    )
    return MaskPair(context=tuple(int(j) for j in context), targets=targets)


# ---- model -------------------------------------------------------------


@dataclass(frozen=True)
class TabularConfig:
    """Architecture, optimization, masking, and annealing settings."""

    d: int = 16
    d_z: int = 8
    hidden: tuple = (64, 64)
    activation: str = "gelu"
    lr: float = 5e-4
    weight_decay: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 512
    epochs: int = 30
    seed: int = 0
    k_targets: int = 4
    ratios: tuple = (0.15, 0.5, 0.15, 0.8)
    alpha_rec: float = 0.001
    alpha_gen: float = 0.1
    alpha_kl_sx: float = 1e-6
    alpha_kl_z: float = 1e-6
    alpha_kl_sy: float = 1e-5
    anneal_epochs: int = 50
    probe_every: int = 5
    patience: int = 3
    probe_drop: float = 0.2
    aggregation: str = "p90"

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise InputError("epochs must be >= 0 and batch_size >= 1")
        if len(self.hidden) < 1:
            raise InputError("need at least one trunk layer")
        if self.aggregation not in ("mean", "p90"):
            raise InputError("aggregation must be 'mean' or 'p90'")


@dataclass
class TabularModel:
    schema: FeatureSchema
    d: int
    d_z: int
    hidden: tuple
    activation: str
    specs: dict
    params: ParamStore
    col_mean: np.ndarray
    col_std: np.ndarray

    def trunk(self, name, inp):
        h = mlp_forward(self.specs[name], self.params, inp, prefix=f"{name}.")
        h = h.tanh() if self.activation == "tanh" else h.gelu()
        return h.matmul(self.params[f"{name}.head_w"]) + self.params[f"{name}.head_b"]

    def heads(self, name, inp):
        out = self.trunk(name, inp)
        n = out.shape[0]
        out3 = out.reshape(n, self.schema.d_feat, 2 * self.d)
        return DiagGaussian(out3[:, :, : self.d], out3[:, :, self.d :])

    def obs_var(self, which):
        return self.params[f"log_var_{which}"].clamp(-8.0, 8.0).exp()

    def standardize(self, numeric):
        return (np.asarray(numeric, dtype=np.float64) - self.col_mean) / self.col_std

    def copy(self):
        return TabularModel(
            schema=self.schema, d=self.d, d_z=self.d_z, hidden=self.hidden,
            activation=self.activation, specs=dict(self.specs),
            params=self.params.copy(), col_mean=self.col_mean.copy(),
            col_std=self.col_std.copy(),
        )


def build_tabular_model(schema, config=None, rng=None, seed=None,
                        col_mean=None, col_std=None):
    """Construct trunks, per-feature heads, and per-feature decoders."""
    cfg = config or TabularConfig()
    if rng is None:
        rng = philox_stream(cfg.seed if seed is None else seed, "init")
    d, d_z, dd = cfg.d, cfg.d_z, schema.d_feat
    feat_width = schema.n_numeric + schema.onehot_width
    trunk_hidden = tuple(cfg.hidden[:-1])
    trunk_out = int(cfg.hidden[-1])
    specs = {
        "ctx": MlpSpec(feat_width + dd, trunk_hidden, trunk_out,
                       activation=cfg.activation),
        "trg": MlpSpec(d + d_z + feat_width, trunk_hidden, trunk_out,
                       activation=cfg.activation),
        "prd": MlpSpec(d + d_z + dd, trunk_hidden, trunk_out,
                       activation=cfg.activation),
        "aux": MlpSpec(d, cfg.hidden, 2 * d_z, activation=cfg.activation),
    }
    params = ParamStore()
    for name in ("ctx", "trg", "prd", "aux"):
        init_mlp_params(specs[name], rng, store=params, prefix=f"{name}.")
    for name in ("ctx", "trg", "prd"):
        limit = math.sqrt(6.0 / (trunk_out + 2 * d * dd))
        params.add(f"{name}.head_w",
                   rng.uniform(-limit, limit, size=(trunk_out, dd * 2 * d)))
        params.add(f"{name}.head_b", np.zeros(dd * 2 * d))
    if schema.n_numeric:
        limit = math.sqrt(6.0 / (d + 1))
        params.add("dec.num_w",
                   rng.uniform(-limit, limit, size=(schema.n_numeric, d)))
        params.add("dec.num_b", np.zeros(schema.n_numeric))
    for j, c in enumerate(schema.cardinalities):
        limit = math.sqrt(6.0 / (d + c))
        params.add(f"dec.cat{j}_w", rng.uniform(-limit, limit, size=(d, c)))
        params.add(f"dec.cat{j}_b", np.zeros(c))
    params.add("log_var_x", np.array(0.0))
    params.add("log_var_y", np.array(0.0))
    params.freeze()
    return TabularModel(
        schema=schema, d=d, d_z=d_z, hidden=tuple(cfg.hidden),
        activation=cfg.activation, specs=specs, params=params,
        col_mean=np.zeros(schema.n_numeric) if col_mean is None else col_mean,
        col_std=np.ones(schema.n_numeric) if col_std is None else col_std,
    )


def _onehot(categorical, cardinalities):
    if len(cardinalities) == 0:
        return np.zeros((categorical.shape[0], 0))
    cols = []
    for j, c in enumerate(cardinalities):
        codes = categorical[:, j]
        if codes.min() < 0 or codes.max() >= c:
            raise InputError(f"categorical column {j} outside [0, {c})")
        cols.append(np.eye(c)[codes])
    return np.concatenate(cols, axis=1)


def _masked_input(schema, numeric_std, onehot, present):
    # present is a {0,1} vector over features, shared by the batch.
    n = numeric_std.shape[0]
    num = numeric_std * present[: schema.n_numeric]
    hot = []
    off = 0
    for j, c in enumerate(schema.cardinalities):
        hot.append(onehot[:, off : off + c] * present[schema.n_numeric + j])
        off += c
    hot = np.concatenate(hot, axis=1) if hot else np.zeros((n, 0))
    flag = np.tile(present, (n, 1))
    return np.concatenate([num, hot, flag], axis=1)


@dataclass
class TabularBundle:
    """Distributions, samples, and masks from one stochastic pass."""

    q_sx: DiagGaussian
    q_z: DiagGaussian
    q_sy: DiagGaussian
    p_sy: tuple
    s_x: object
    pool: object
    z: object
    s_w: object
    masks: MaskPair


def tabular_forward(model, numeric, categorical, masks, noise):
    """One training pass: masked context, pooled latents, K prior heads.

    noise is (eps_sx [N,D,d], eps_z [N,d_z], eps_sw [N,D,d]). The target
    posterior sees the complete feature vector once; the predictor runs
    once per target mask with that mask's indicator appended.
    """
    schema = model.schema
    numeric_std = model.standardize(numeric)
    onehot = _onehot(categorical, schema.cardinalities)
    eps_sx, eps_z, eps_sw = noise

    present = np.zeros(schema.d_feat)
    present[list(masks.context)] = 1.0
    ctx_in = _masked_input(schema, numeric_std, onehot, present)
    q_sx = model.heads("ctx", ctx_in)
    s_x = reparam_sample(q_sx, eps_sx)

    ctx_idx = np.array(masks.context)
    pool = s_x[:, ctx_idx, :].mean(axis=1)

    aux_out = mlp_forward(model.specs["aux"], model.params, pool, prefix="aux.")
    q_z = DiagGaussian(aux_out[:, : model.d_z], aux_out[:, model.d_z :])
    z = reparam_sample(q_z, eps_z)

    full = np.concatenate([numeric_std, onehot], axis=1)
    trg_in = concat([pool, z, as_tensor(full)], axis=1)
    q_sy = model.heads("trg", trg_in)
    s_w = reparam_sample(q_sy, eps_sw)

    p_sy = []
    for trg in masks.targets:
        indicator = np.zeros(model.schema.d_feat)
        indicator[list(trg)] = 1.0
        n = numeric_std.shape[0]
        prd_in = concat([pool, z, as_tensor(np.tile(indicator, (n, 1)))],
                        axis=1)
        p_sy.append(model.heads("prd", prd_in))

    return TabularBundle(q_sx=q_sx, q_z=q_z, q_sy=q_sy, p_sy=tuple(p_sy),
                         s_x=s_x, pool=pool, z=z, s_w=s_w, masks=masks)


def _per_feature_nll(model, latents, numeric_std, categorical, variance):
    """[N, D] matrix of per-feature negative log likelihoods."""
    schema = model.schema
    n = numeric_std.shape[0]
    pieces = []
    if schema.n_numeric:
        s_num = latents[:, : schema.n_numeric, :]
        mean = (s_num * model.params["dec.num_w"]).sum(axis=-1) \
            + model.params["dec.num_b"]
        flat = gaussian_nll(
            np.asarray(numeric_std).reshape(-1, 1),
            mean.reshape(n * schema.n_numeric, 1), variance,
        )
        pieces.append(flat.reshape(n, schema.n_numeric))
    for j, _ in enumerate(schema.cardinalities):
        s_j = latents[:, schema.n_numeric + j, :]
        logits = s_j.matmul(model.params[f"dec.cat{j}_w"]) \
            + model.params[f"dec.cat{j}_b"]
        pieces.append(categorical_nll(logits, categorical[:, j]).reshape(n, 1))
    return concat(pieces, axis=1)


def tabular_terms(model, bundle, numeric, categorical):
    """The five loss terms as scalar graph nodes, mask-normalized."""
    schema = model.schema
    masks = bundle.masks
    numeric_std = model.standardize(numeric)
    ctx_idx = np.array(masks.context)

    rec_nll = _per_feature_nll(model, bundle.s_x, numeric_std, categorical,
                               model.obs_var("x"))
    rec = rec_nll[:, ctx_idx].sum(axis=-1).mean() * (1.0 / masks.m_ctx)

    gen_nll = _per_feature_nll(model, bundle.s_w, numeric_std, categorical,
                               model.obs_var("y"))
    gen = gen_nll.sum(axis=-1).mean() * (1.0 / schema.d_feat)

    kl_sx_all = kl_to_standard(bundle.q_sx)
    kl_sx = kl_sx_all[:, ctx_idx].sum(axis=-1).mean() * (1.0 / masks.m_ctx)

    kl_z = kl_to_standard(bundle.q_z).mean()

    k = len(masks.targets)
    kl_sy_sum = None
    for prior, trg in zip(bundle.p_sy, masks.targets):
        per_feature = kl_diag(bundle.q_sy, prior)
        term = per_feature[:, np.array(trg)].sum(axis=-1)
        kl_sy_sum = term if kl_sy_sum is None else kl_sy_sum + term
    kl_sy = kl_sy_sum.mean() * (1.0 / (k * masks.m_trg))

    return {"rec": rec, "gen": gen, "kl_sx": kl_sx, "kl_z": kl_z,
            "kl_sy": kl_sy}


def tabular_losses(model, bundle, numeric, categorical, weights):
    """Evaluate the mask-normalized breakdown for one batch."""
    terms = tabular_terms(model, bundle, numeric, categorical)
    total = (
        weights.alpha_rec * terms["rec"]
        + weights.alpha_gen * terms["gen"]
        + weights.alpha_kl_sx * terms["kl_sx"]
        + weights.alpha_kl_z * terms["kl_z"]
        + weights.alpha_kl_sy * terms["kl_sy"]
    )
    return LossBreakdown(
        rec=terms["rec"].item(), gen=terms["gen"].item(),
        kl_sx=terms["kl_sx"].item(), kl_z=terms["kl_z"].item(),
        kl_sy=terms["kl_sy"].item(), sigreg_sx=0.0, sigreg_sy=0.0,
        total=total.item(),
    )


# ---- training -----------------------------------------------------------


@dataclass(frozen=True)
class ProbeRecord:
    epoch: int
    val_accuracy: float
    filtered_val_accuracy: float


@dataclass
class TabularTrainResult:
    model: TabularModel
    loss_rows: list
    probe_records: list
    best_epoch: int
    steps: int
    train_idx: np.ndarray
    val_idx: np.ndarray


def _probe_val_accuracy(model, dataset, train_idx, val_idx, config):
    emb_tr, _ = extract_embeddings_uncertainty(
        model, dataset, aggregation=config.aggregation, indices=train_idx)
    emb_va, unc_va = extract_embeddings_uncertainty(
        model, dataset, aggregation=config.aggregation, indices=val_idx)
    probe = train_linear_probe(emb_tr, dataset.label[train_idx])
    pred = probe.predict(emb_va)
    labels = dataset.label[val_idx]
    plain = float(np.mean(pred == labels))
    filtered = selective_accuracy(pred, labels, unc_va, config.probe_drop)
    return plain, filtered


def train_tabular(config, dataset, probe_hook=None):
    """Masked-pair training with periodic filtered-probe checkpointing.

    Splits 80/20, standardizes numerics on the training split, then per
    batch samples fresh masks, runs the stochastic pass, applies the
    annealed weights, and steps AdamW. Every probe_every epochs the
    filtered validation accuracy (most-uncertain fifth discarded) is
    probed; the best parameters are kept and restored at the end, and
    training stops early once `patience` probes fail to improve.
    """
    if dataset.n < 5:
        raise InputError("dataset too small to split")
    schema = FeatureSchema.from_dataset(dataset)

    shuffle_rng = philox_stream(config.seed, "shuffle")
    mask_rng = philox_stream(config.seed, "mask")
    noise_rng = philox_stream(config.seed, "noise")

    order = shuffle_rng.permutation(dataset.n)
    n_train = int(0.8 * dataset.n)
    train_idx, val_idx = order[:n_train], order[n_train:]

    numeric_tr = dataset.numeric[train_idx]
    col_mean = numeric_tr.mean(axis=0)
    col_std = numeric_tr.std(axis=0, ddof=0)
    col_std = np.where(col_std > 0, col_std, 1.0)

    model = build_tabular_model(
        schema, config, rng=philox_stream(config.seed, "init"),
        col_mean=col_mean, col_std=col_std,
    )
    opt = AdamWState.for_params(
        model.params, lr=config.lr, weight_decay=config.weight_decay,
        beta1=config.beta1, beta2=config.beta2, eps=config.eps,
    )

    steps_per_epoch = max(1, math.ceil(n_train / config.batch_size))
    anneal_steps = config.anneal_epochs * steps_per_epoch
    weights = LossWeights(
        alpha_rec=config.alpha_rec, alpha_gen=config.alpha_gen,
        alpha_kl_sx=config.alpha_kl_sx, alpha_kl_z=config.alpha_kl_z,
        alpha_kl_sy=config.alpha_kl_sy,
    )
    shadow = SimpleNamespace(
        weights=weights,
        anneal_kl_sx=AnnealSchedule(config.alpha_kl_sx, anneal_steps),
        anneal_kl_z=AnnealSchedule(config.alpha_kl_z, anneal_steps),
        anneal_kl_sy=AnnealSchedule(config.alpha_kl_sy, anneal_steps),
    )

    loss_rows = []
    probe_records = []
    best_params = model.params.copy()
    best_epoch = 0
    best_score = -np.inf
    misses = 0
    t = 0

    for epoch in range(1, config.epochs + 1):
        perm = shuffle_rng.permutation(n_train)
        for lo in range(0, n_train, config.batch_size):
            batch = train_idx[perm[lo : lo + config.batch_size]]
            num_b = dataset.numeric[batch]
            cat_b = dataset.categorical[batch]
            b = len(batch)
            masks = collate_masks(schema.d_feat, config.ratios,
                                  config.k_targets, mask_rng)
            noise = (
                noise_rng.normal(size=(b, schema.d_feat, config.d)),
                noise_rng.normal(size=(b, config.d_z)),
                noise_rng.normal(size=(b, schema.d_feat, config.d)),
            )
            w_t = effective_weights(shadow, t)
            try:
                bundle = tabular_forward(model, num_b, cat_b, masks, noise)
                terms = tabular_terms(model, bundle, num_b, cat_b)
                total = (
                    w_t.alpha_rec * terms["rec"]
                    + w_t.alpha_gen * terms["gen"]
                    + w_t.alpha_kl_sx * terms["kl_sx"]
                    + w_t.alpha_kl_z * terms["kl_z"]
                    + w_t.alpha_kl_sy * terms["kl_sy"]
                )
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
                "epoch": epoch, "step": t,
                "rec": terms["rec"].item(), "gen": terms["gen"].item(),
                "kl_sx": terms["kl_sx"].item(), "kl_z": terms["kl_z"].item(),
                "kl_sy": terms["kl_sy"].item(),
                "sigreg_sx": 0.0, "sigreg_sy": 0.0,
                "total": total.item(),
            })

        if epoch % config.probe_every == 0 or epoch == config.epochs:
            plain, filtered = _probe_val_accuracy(
                model, dataset, train_idx, val_idx, config)
            probe_records.append(ProbeRecord(
                epoch=epoch, val_accuracy=plain,
                filtered_val_accuracy=filtered))
            if probe_hook is not None:
                probe_hook(model, probe_records[-1])
            if filtered > best_score:
                best_score = filtered
                best_epoch = epoch
                best_params = model.params.copy()
                misses = 0
            else:
                misses += 1
                if misses >= config.patience:
                    break

    if best_epoch > 0:
        model.params.load_from(best_params)
    return TabularTrainResult(
        model=model, loss_rows=loss_rows, probe_records=probe_records,
        best_epoch=best_epoch, steps=t, train_idx=train_idx, val_idx=val_idx,
    )


# ---- embedding extraction ------------------------------------------------


def nearest_rank_p90(values):
    """Row-wise 90th percentile, nearest-rank: sorted[min(n-1, ceil(0.9 n))]."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] < 1:
        raise InputError("values must be [N, m] with m >= 1")
    m = arr.shape[1]
    idx = min(m - 1, int(math.ceil(0.9 * m)))
    return np.sort(arr, axis=1)[:, idx]


def extract_embeddings_uncertainty(model, dataset, aggregation="mean",
                                   indices=None, batch_size=1024):
    """Posterior-mean embeddings and a per-sample spread summary.

    Runs the mean path with the full feature set as context, flattens
    the per-feature target-posterior means to [N, D*d], and aggregates
    all D*d posterior standard deviations per sample by the requested
    rule.
    """
    if aggregation not in ("mean", "p90"):
        raise InputError("aggregation must be 'mean' or 'p90'")
    schema = model.schema
    idx = np.arange(dataset.n) if indices is None else np.asarray(indices)
    numeric = dataset.numeric[idx]
    categorical = dataset.categorical[idx]
    n = numeric.shape[0]

    full_mask = MaskPair(context=tuple(range(schema.d_feat)),
                         targets=(tuple(range(schema.d_feat)),))
    emb = np.empty((n, schema.d_feat * model.d))
    std = np.empty((n, schema.d_feat * model.d))
    for lo in range(0, n, batch_size):
        hi = min(lo + batch_size, n)
        b = hi - lo
        noise = (np.zeros((b, schema.d_feat, model.d)),
                 np.zeros((b, model.d_z)),
                 np.zeros((b, schema.d_feat, model.d)))
        bundle = tabular_forward(model, numeric[lo:hi], categorical[lo:hi],
                                 full_mask, noise)
        emb[lo:hi] = bundle.q_sy.mean.data.reshape(b, -1)
        std[lo:hi] = np.exp(bundle.q_sy.log_var.data / 2.0).reshape(b, -1)

    if aggregation == "mean":
        unc = std.mean(axis=1)
    else:
        unc = nearest_rank_p90(std)
    return emb, unc


def write_embeddings_csv(embeddings, uncertainty, labels, path):
    emb = np.asarray(embeddings)
    header = ["id"] + [f"e{i}" for i in range(emb.shape[1])]
    header += ["uncertainty", "label"]
    lines = [",".join(header)]
    for i in range(emb.shape[0]):
        cells = [str(i)]
        cells += [repr(float(v)) for v in emb[i]]
        cells.append(repr(float(uncertainty[i])))
        cells.append(str(int(labels[i])))
        lines.append(",".join(cells))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


# ---- checkpointing -------------------------------------------------------


def save_tabular_checkpoint(model, path, meta=None):
    header = {
        "kind": "tabular",
        "schema": {
            "n_numeric": model.schema.n_numeric,
            "cardinalities": list(model.schema.cardinalities),
        },
        "dims": {"d": model.d, "d_z": model.d_z},
        "hidden": list(model.hidden),
        "activation": model.activation,
        "col_mean": [float(v) for v in model.col_mean],
        "col_std": [float(v) for v in model.col_std],
        "meta": meta or {},
    }
    write_checkpoint(path, header, model.params)


def load_tabular_checkpoint(path):
    header, arrays = read_checkpoint(path)
    if header.get("kind") != "tabular":
        raise InputError(f"checkpoint kind '{header.get('kind')}' is not 'tabular'")
    schema = FeatureSchema(
        n_numeric=header["schema"]["n_numeric"],
        cardinalities=tuple(header["schema"]["cardinalities"]),
    )
    cfg = TabularConfig(d=header["dims"]["d"], d_z=header["dims"]["d_z"],
                        hidden=tuple(header["hidden"]),
                        activation=header["activation"])
    model = build_tabular_model(
        schema, cfg, rng=np.random.default_rng(0),
        col_mean=np.array(header["col_mean"]),
        col_std=np.array(header["col_std"]),
    )
    for name, p in model.params.items():
        if name not in arrays:
            raise InputError(f"checkpoint missing parameter '{name}'")
        if arrays[name].shape != p.data.shape:
            raise InputError(f"checkpoint shape mismatch for '{name}'")
        p.data[...] = arrays[name]
    return model, header.get("meta", {})
