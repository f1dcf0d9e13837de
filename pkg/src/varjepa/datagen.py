"""Ground-truth synthetic data: paired latent process and ambiguous tabular sets.

Two generators live here. The paired process draws a mixture-structured
context latent s_x, an auxiliary latent z, a target latent
s_y = s_x + A z + noise, and pushes both latents through frozen random
tanh networks to produce observation pairs (x, y). The tabular
generator builds three Gaussian clusters over numeric features plus
quantile-binned categoricals, with a per-sample ambiguity score that
blends prototypes and flips categories so that uncertainty has a
controllable ground truth.

All randomness is drawn from named counter-based streams in a fixed,
documented order, so any dataset regenerates bit-identically from its
seed. Datasets serialize as a JSON manifest plus raw little-endian
float64/int64 matrices.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numeric import (
    InputError,
    MlpSpec,
    ParamStore,
    Tensor,
    init_mlp_params,
    mlp_forward,
    philox_stream,
)

__all__ = [
    "SimProcess",
    "PairDataset",
    "TabularDataset",
    "TabularGenConfig",
    "sample_sim_process",
    "gen_pairs",
    "amplified_ambiguity",
    "gen_sim_tabular",
    "corrupt_images",
    "save_pair_dataset",
    "load_pair_dataset",
    "save_tabular_dataset",
    "load_tabular_dataset",
    "read_idx",
]


# ---- paired-latent process --------------------------------------------


@dataclass
class SimProcess:
    """Frozen generative process for observation pairs."""

    a_matrix: np.ndarray
    hx_spec: MlpSpec
    hx_params: ParamStore
    hy_spec: MlpSpec
    hy_params: ParamStore
    sigma_x: float
    sigma_y: float
    sigma_z: float
    delta_scale: float
    tau_x: float
    tau_y: float
    d_obs: int
    d_s: int
    d_z: int
    seed: int

    @property
    def delta(self):
        return self.delta_scale * np.ones(self.d_s)

    def h_x(self, s):
        return mlp_forward(self.hx_spec, self.hx_params, Tensor(s)).data

    def h_y(self, s):
        return mlp_forward(self.hy_spec, self.hy_params, Tensor(s)).data


def sample_sim_process(
    seed,
    d_obs=32,
    d_s=16,
    d_z=8,
    sigma_x=1.0,
    sigma_y=0.5,
    sigma_z=1.0,
    delta_scale=2.0,
    tau_x=0.3,
    tau_y=0.3,
    gen_hidden=64,
):
    """Draw the mixing matrix and frozen generator networks once.

    Draw order from the 'process' stream: A, then h_x parameters, then
    h_y parameters.
    """
    rng = philox_stream(seed, "process")
    a_matrix = rng.normal(0.0, np.sqrt(1.0 / d_z), size=(d_s, d_z))
    hx_spec = MlpSpec(d_s, (gen_hidden,), d_obs, activation="tanh")
    hy_spec = MlpSpec(d_s, (gen_hidden,), d_obs, activation="tanh")
    hx_params = init_mlp_params(hx_spec, rng).freeze()
    hy_params = init_mlp_params(hy_spec, rng).freeze()
    return SimProcess(
        a_matrix=a_matrix,
        hx_spec=hx_spec,
        hx_params=hx_params,
        hy_spec=hy_spec,
        hy_params=hy_params,
        sigma_x=sigma_x,
        sigma_y=sigma_y,
        sigma_z=sigma_z,
        delta_scale=delta_scale,
        tau_x=tau_x,
        tau_y=tau_y,
        d_obs=d_obs,
        d_s=d_s,
        d_z=d_z,
        seed=seed,
    )


@dataclass
class PairDataset:
    """Observation pairs with their generating latents and mixture labels."""

    x: np.ndarray
    y: np.ndarray
    s_x: np.ndarray
    s_y: np.ndarray
    z: np.ndarray
    c: np.ndarray
    seed: int = 0
    process_seed: int = 0

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def d_obs(self):
        return self.x.shape[1]


def gen_pairs(process, n, rng):
    """Sample n i.i.d. pairs from the process.

    rng is a Generator or an integer seed for the 'data' stream. Draw
    order: mixture labels, z noise, s_x noise, s_y noise, x noise,
    y noise.
    """
    if n < 1:
        raise InputError("n must be >= 1")
    seed = None
    if isinstance(rng, (int, np.integer)):
        seed = int(rng)
        rng = philox_stream(seed, "data")
    c = (rng.random(n) < 0.5).astype(np.int64)
    z = process.sigma_z * rng.normal(size=(n, process.d_z))
    s_x = c[:, None] * process.delta + process.sigma_x * rng.normal(
        size=(n, process.d_s)
    )
    s_y = s_x + z @ process.a_matrix.T + process.sigma_y * rng.normal(
        size=(n, process.d_s)
    )
    x = process.h_x(s_x) + process.tau_x * rng.normal(size=(n, process.d_obs))
    y = process.h_y(s_y) + process.tau_y * rng.normal(size=(n, process.d_obs))
    return PairDataset(
        x=x, y=y, s_x=s_x, s_y=s_y, z=z, c=c,
        seed=-1 if seed is None else seed,
        process_seed=process.seed,
    )


# ---- ambiguous tabular generator ----------------------------------------


@dataclass(frozen=True)
class TabularGenConfig:
    """Knobs of the clustered tabular generator.

    Prototypes sit proto_distance apart along random orthogonal
    directions; blending moves a random mix_subset_frac of the numeric
    features toward an alternative class prototype with strength
    mix_max * u^gamma; categorical values flip with probability
    flip_coef * u^gamma. On top of the shared noise_scale, ambiguous
    samples receive extra heteroscedastic noise with standard deviation
    amb_noise_scale * u^gamma on the amb_noise_dims coordinates where
    the prototypes are most spread out, so high-u rows are noisy exactly
    where the class signal lives. u_const, when set, overrides the
    ambiguity draw for every sample (useful for clean-limit checks).
    """

    n_numeric: int = 28
    n_categorical: int = 4
    n_classes: int = 3
    n_bins: int = 4
    proto_distance: float = 4.0
    noise_scale: float = 1.0
    mix_subset_frac: float = 0.5
    mix_max: float = 0.5
    flip_coef: float = 0.3
    amb_noise_scale: float = 4.0
    amb_noise_dims: int = 8
    gamma: float = 2.0
    u_const: float | None = None


@dataclass
class TabularDataset:
    """Numeric + categorical features with labels and ambiguity scores."""

    numeric: np.ndarray
    categorical: np.ndarray
    cardinalities: tuple
    label: np.ndarray
    u: np.ndarray
    seed: int = 0

    @property
    def n(self):
        return self.numeric.shape[0]

    @property
    def n_features(self):
        return self.numeric.shape[1] + self.categorical.shape[1]


def amplified_ambiguity(u, gamma=2.0):
    """Map a raw uniform score to its amplified strength u**gamma."""
    return np.asarray(u, dtype=np.float64) ** gamma


def gen_sim_tabular(seed, n, cfg=None):
    """Three-class clustered tabular data with per-sample ambiguity.

    Draw order from the 'data' stream: prototype directions, labels,
    ambiguity u, alternative classes, mixing subsets, numeric noise,
    ambiguity noise (when amb_noise_dims > 0), then per categorical
    column its projection direction, value noise, and flip draws.
    """
    if n < 1:
        raise InputError("n must be >= 1")
    cfg = cfg or TabularGenConfig()
    if cfg.n_classes > cfg.n_numeric:
        raise InputError("need at least as many numeric dims as classes")
    if not 0 <= cfg.amb_noise_dims <= cfg.n_numeric:
        raise InputError("amb_noise_dims must lie in [0, n_numeric]")
    rng = philox_stream(seed, "data")

    basis, _ = np.linalg.qr(rng.normal(size=(cfg.n_numeric, cfg.n_classes)))
    # Pairwise distance between a*e_i and a*e_j is a*sqrt(2).
    protos = (cfg.proto_distance / np.sqrt(2.0)) * basis.T

    label = rng.integers(0, cfg.n_classes, size=n)
    u = rng.random(n)
    if cfg.u_const is not None:
        u = np.full(n, float(cfg.u_const))
    u_amb = amplified_ambiguity(u, cfg.gamma)

    alt = (label + 1 + rng.integers(0, cfg.n_classes - 1, size=n)) % cfg.n_classes

    k_mix = int(round(cfg.mix_subset_frac * cfg.n_numeric))
    mix_rank = rng.random((n, cfg.n_numeric)).argsort(axis=1)
    mix_mask = mix_rank < k_mix

    beta = (cfg.mix_max * u_amb)[:, None]
    base = protos[label]
    blended = np.where(mix_mask, (1.0 - beta) * base + beta * protos[alt], base)
    numeric = blended + cfg.noise_scale * rng.normal(size=(n, cfg.n_numeric))
    if cfg.amb_noise_dims > 0:
        # The draw is consumed even at amb_noise_scale = 0 so scale
        # sweeps leave every downstream draw untouched.
        spread = protos.var(axis=0)
        dims = np.sort(np.argsort(-spread, kind="stable")[: cfg.amb_noise_dims])
        numeric[:, dims] += (cfg.amb_noise_scale * u_amb)[:, None] * rng.normal(
            size=(n, dims.size)
        )

    cats = np.empty((n, cfg.n_categorical), dtype=np.int64)
    for j in range(cfg.n_categorical):
        direction = rng.normal(size=cfg.n_numeric)
        direction /= np.linalg.norm(direction)
        raw = blended @ direction + cfg.noise_scale * rng.normal(size=n)
        qs = np.quantile(raw, np.arange(1, cfg.n_bins) / cfg.n_bins)
        codes = np.searchsorted(qs, raw, side="right")
        flip = rng.random(n) < cfg.flip_coef * u_amb
        offset = 1 + rng.integers(0, cfg.n_bins - 1, size=n)
        cats[:, j] = np.where(flip, (codes + offset) % cfg.n_bins, codes)

    return TabularDataset(
        numeric=numeric,
        categorical=cats,
        cardinalities=tuple([cfg.n_bins] * cfg.n_categorical),
        label=label.astype(np.int64),
        u=u,
        seed=seed,
    )


def corrupt_images(images, u, lam, rng):
    """Blend each image toward an independent uniform-random image.

    The blend weight is clip(lam * u_i, 0, 1) per sample; inputs must
    lie in [0, 1].
    """
    images = np.asarray(images, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if images.ndim != 2:
        raise InputError("images must be [N, D]")
    if u.shape != (images.shape[0],):
        raise InputError("u must have one entry per image")
    if images.min() < 0.0 or images.max() > 1.0:
        raise InputError("pixel values must lie in [0, 1]")
    alpha = np.clip(lam * u, 0.0, 1.0)[:, None]
    noise = rng.random(images.shape)
    return (1.0 - alpha) * images + alpha * noise


# ---- serialization -------------------------------------------------------

_MANIFEST = "manifest.json"


def _write_array(path, arr):
    kind = arr.dtype.kind
    dtype = "<f8" if kind == "f" else "<i8"
    Path(path).write_bytes(np.ascontiguousarray(arr).astype(dtype).tobytes())
    return dtype


def _read_array(path, shape, dtype):
    data = np.frombuffer(Path(path).read_bytes(), dtype=dtype)
    expected = int(np.prod(shape))
    if data.size != expected:
        raise InputError(f"{path}: expected {expected} values, found {data.size}")
    return data.reshape(shape).copy()


def _save_dataset(out_dir, kind, arrays, extra, overwrite):
    out = Path(out_dir)
    manifest_path = out / _MANIFEST
    if manifest_path.exists() and not overwrite:
        raise InputError(f"{manifest_path} exists; pass overwrite to replace it")
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    for name, arr in arrays.items():
        fname = f"{name}.{'f64' if arr.dtype.kind == 'f' else 'i64'}"
        dtype = _write_array(out / fname, arr)
        files[name] = {"file": fname, "shape": list(arr.shape), "dtype": dtype}
    manifest = {"kind": kind, "files": files, **extra}
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def _load_manifest(in_dir, expected_kind):
    manifest_path = Path(in_dir) / _MANIFEST
    if not manifest_path.exists():
        raise InputError(f"no manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("kind") != expected_kind:
        raise InputError(
            f"dataset kind '{manifest.get('kind')}' is not '{expected_kind}'"
        )
    arrays = {}
    for name, info in manifest["files"].items():
        arrays[name] = _read_array(
            Path(in_dir) / info["file"], tuple(info["shape"]), info["dtype"]
        )
    return manifest, arrays


def save_pair_dataset(ds, out_dir, overwrite=False):
    arrays = {"x": ds.x, "y": ds.y, "s_x": ds.s_x, "s_y": ds.s_y, "z": ds.z,
              "c": ds.c}
    extra = {
        "n": int(ds.n),
        "dims": {"d_obs": int(ds.x.shape[1]), "d_s": int(ds.s_x.shape[1]),
                 "d_z": int(ds.z.shape[1])},
        "seed": int(ds.seed),
        "process_seed": int(ds.process_seed),
    }
    return _save_dataset(out_dir, "pairs", arrays, extra, overwrite)


def load_pair_dataset(in_dir):
    manifest, a = _load_manifest(in_dir, "pairs")
    return PairDataset(
        x=a["x"], y=a["y"], s_x=a["s_x"], s_y=a["s_y"], z=a["z"],
        c=a["c"].astype(np.int64),
        seed=manifest.get("seed", 0),
        process_seed=manifest.get("process_seed", 0),
    )


def save_tabular_dataset(ds, out_dir, overwrite=False):
    arrays = {
        "numeric": ds.numeric,
        "categorical": ds.categorical,
        "label": ds.label,
        "u": ds.u,
    }
    columns = [{"kind": "numeric"} for _ in range(ds.numeric.shape[1])]
    columns += [
        {"kind": "categorical", "cardinality": int(cj)} for cj in ds.cardinalities
    ]
    extra = {
        "n": int(ds.n),
        "seed": int(ds.seed),
        "cardinalities": [int(cj) for cj in ds.cardinalities],
        "columns": columns,
    }
    return _save_dataset(out_dir, "tabular", arrays, extra, overwrite)


def load_tabular_dataset(in_dir):
    manifest, a = _load_manifest(in_dir, "tabular")
    return TabularDataset(
        numeric=a["numeric"],
        categorical=a["categorical"].astype(np.int64),
        cardinalities=tuple(manifest["cardinalities"]),
        label=a["label"].astype(np.int64),
        u=a["u"],
        seed=manifest.get("seed", 0),
    )


def read_idx(path):
    """Read a big-endian IDX file (magic 0x0000080x) into an array."""
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise InputError("truncated IDX header")
    zero, dtype_code, ndim = struct.unpack(">HBB", raw[:4])
    if zero != 0:
        raise InputError("bad IDX magic")
    dtypes = {0x08: np.uint8, 0x09: np.int8, 0x0B: ">i2", 0x0C: ">i4",
              0x0D: ">f4", 0x0E: ">f8"}
    if dtype_code not in dtypes:
        raise InputError(f"unsupported IDX dtype 0x{dtype_code:02x}")
    header_len = 4 + 4 * ndim
    dims = struct.unpack(f">{ndim}I", raw[4:header_len])
    data = np.frombuffer(raw, dtype=dtypes[dtype_code], offset=header_len)
    if data.size != int(np.prod(dims)):
        raise InputError("IDX payload size does not match header dims")
    return data.reshape(dims).copy()
