"""The six-network coupled latent-variable model.

Three amortized posteriors (context encoder, auxiliary encoder, target
posterior), one learned conditional prior (the predictor), and two
decoders with global learnable observation noise. The factorization is
strict: the auxiliary encoder sees only the context latent sample, and
the predictor sees only (context latent, auxiliary latent), never the
target observation. That discipline is what lets the predictor act as
a conditional prior over the target latent.

Checkpoints are a 4-byte little-endian header length, a JSON header,
then raw little-endian float64 parameter blocks in header order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .gaussian import DiagGaussian, reparam_sample
from .numeric import (
    InputError,
    MlpSpec,
    ParamStore,
    Tensor,
    as_tensor,
    concat,
    init_mlp_params,
    mlp_forward,
    philox_stream,
)

__all__ = [
    "VarJepaModel",
    "LatentBundle",
    "build_model",
    "infer_forward",
    "generate",
    "embed",
    "save_checkpoint",
    "load_checkpoint",
    "write_checkpoint",
    "read_checkpoint",
]

_NET_PREFIXES = ("ctx", "aux", "trg", "prd", "dcx", "dcy")


@dataclass
class VarJepaModel:
    """Specs plus one flat ParamStore holding every network's slots."""

    d_obs: int
    d_s: int
    d_z: int
    hidden: tuple
    activation: str
    specs: dict
    params: ParamStore

    def net(self, name, inp):
        return mlp_forward(self.specs[name], self.params, inp, prefix=f"{name}.")

    def obs_var(self, which):
        # Global observation noise, stored as a clamped log-variance scalar.
        return self.params[f"log_var_{which}"].clamp(-8.0, 8.0).exp()

    def copy(self):
        return VarJepaModel(
            d_obs=self.d_obs, d_s=self.d_s, d_z=self.d_z, hidden=self.hidden,
            activation=self.activation, specs=dict(self.specs),
            params=self.params.copy(),
        )


@dataclass
class LatentBundle:
    """One stochastic forward pass: distributions, samples, and their noise."""

    q_sx: DiagGaussian
    q_z: DiagGaussian
    q_sy: DiagGaussian
    p_sy: DiagGaussian
    s_x: Tensor
    z: Tensor
    s_y: Tensor
    noise: tuple


def build_model(d_obs, d_s, d_z, rng=None, hidden=(128, 128), activation="gelu",
                seed=None):
    """Construct the six networks with fresh parameters.

    Accepts either an explicit Generator or a seed routed to the 'init'
    stream.
    """
    if rng is None:
        rng = philox_stream(0 if seed is None else seed, "init")
    hidden = tuple(int(h) for h in hidden)
    specs = {
        "ctx": MlpSpec(d_obs, hidden, 2 * d_s, activation=activation),
        "aux": MlpSpec(d_s, hidden, 2 * d_z, activation=activation),
        "trg": MlpSpec(d_s + d_z + d_obs, hidden, 2 * d_s, activation=activation),
        "prd": MlpSpec(d_s + d_z, hidden, 2 * d_s, activation=activation),
        "dcx": MlpSpec(d_s, hidden, d_obs, activation=activation),
        "dcy": MlpSpec(d_s, hidden, d_obs, activation=activation),
    }
    params = ParamStore()
    for name in _NET_PREFIXES:
        init_mlp_params(specs[name], rng, store=params, prefix=f"{name}.")
    params.add("log_var_x", np.array(0.0))
    params.add("log_var_y", np.array(0.0))
    params.freeze()
    return VarJepaModel(
        d_obs=d_obs, d_s=d_s, d_z=d_z, hidden=hidden, activation=activation,
        specs=specs, params=params,
    )


def _split_head(out, d):
    return DiagGaussian(out[:, :d], out[:, d:])


def _check_batch(name, arr, width):
    arr = as_tensor(arr)
    if arr.ndim != 2 or arr.shape[1] != width:
        raise InputError(f"{name} must be [batch, {width}], got {arr.shape}")
    return arr


def infer_forward(model, x, y, noise):
    """Run the posterior chain on a batch and record everything.

    noise is (eps_sx, eps_z, eps_sy). Conditioning uses latent samples,
    not means: q(z | s_x sample), q(s_y | s_x sample, z sample, y), and
    the predictor p(s_y | s_x sample, z sample).
    """
    x = _check_batch("x", x, model.d_obs)
    y = _check_batch("y", y, model.d_obs)
    eps_sx, eps_z, eps_sy = noise

    q_sx = _split_head(model.net("ctx", x), model.d_s)
    s_x = reparam_sample(q_sx, eps_sx)

    q_z = _split_head(model.net("aux", s_x), model.d_z)
    z = reparam_sample(q_z, eps_z)

    q_sy = _split_head(model.net("trg", concat([s_x, z, y], axis=1)), model.d_s)
    s_y = reparam_sample(q_sy, eps_sy)

    p_sy = _split_head(model.net("prd", concat([s_x, z], axis=1)), model.d_s)

    return LatentBundle(
        q_sx=q_sx, q_z=q_z, q_sy=q_sy, p_sy=p_sy,
        s_x=s_x, z=z, s_y=s_y,
        noise=(np.asarray(eps_sx), np.asarray(eps_z), np.asarray(eps_sy)),
    )


def generate(model, x, noise):
    """Sample the generative pathway given a context observation.

    noise is (eps_sx, z_prior, eps_sy, eps_y): the context posterior is
    sampled, z comes straight from its standard-normal prior, the
    predictor provides s_y, and the target decoder adds observation
    noise. Returns numpy arrays (s_x, z, s_y, y_sample).
    """
    x = _check_batch("x", x, model.d_obs)
    eps_sx, z_prior, eps_sy, eps_y = noise

    q_sx = _split_head(model.net("ctx", x), model.d_s)
    s_x = reparam_sample(q_sx, eps_sx)
    z = as_tensor(z_prior).detach()
    if z.shape != (x.shape[0], model.d_z):
        raise InputError("z_prior shape mismatch")
    p_sy = _split_head(model.net("prd", concat([s_x, z], axis=1)), model.d_s)
    s_y = reparam_sample(p_sy, eps_sy)
    y_mean = model.net("dcy", s_y)
    sigma_y = (model.params["log_var_y"].clamp(-8.0, 8.0) * 0.5).exp()
    y_sample = y_mean + sigma_y * as_tensor(eps_y).detach()
    return s_x.data, z.data, s_y.data, y_sample.data


def embed(model, x, y):
    """Deterministic mean-path embeddings plus target-posterior spread.

    Uses means at every stage (zero noise) and returns numpy arrays
    (sx_mean, z_mean, sy_mean, sy_std).
    """
    x = _check_batch("x", x, model.d_obs)
    y = _check_batch("y", y, model.d_obs)

    q_sx = _split_head(model.net("ctx", x), model.d_s)
    sx_mean = q_sx.mean
    q_z = _split_head(model.net("aux", sx_mean), model.d_z)
    z_mean = q_z.mean
    q_sy = _split_head(model.net("trg", concat([sx_mean, z_mean, y], axis=1)),
                       model.d_s)
    sy_std = q_sy.std()
    return sx_mean.data, z_mean.data, q_sy.mean.data, sy_std.data


# ---- checkpoint format -----------------------------------------------------


def write_checkpoint(path, header, params):
    """Write a JSON header plus raw float64 blocks for every parameter."""
    header = dict(header)
    header["params"] = [
        {"name": name, "shape": list(t.data.shape)} for name, t in params.items()
    ]
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for name, t in params.items():
            fh.write(np.ascontiguousarray(t.data).astype("<f8").tobytes())


def read_checkpoint(path):
    """Read back (header, {name: array}) from write_checkpoint output."""
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise InputError("truncated checkpoint")
    (hlen,) = struct.unpack("<I", raw[:4])
    header = json.loads(raw[4 : 4 + hlen].decode("utf-8"))
    arrays = {}
    offset = 4 + hlen
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        if offset + count * 8 > len(raw):
            raise InputError("truncated checkpoint")
        block = np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
        arrays[entry["name"]] = block.reshape(shape).copy()
        offset += count * 8
    if offset != len(raw):
        raise InputError("checkpoint payload size does not match header")
    return header, arrays


def save_checkpoint(model, path, meta=None):
    header = {
        "kind": "simulation",
        "dims": {"d_obs": model.d_obs, "d_s": model.d_s, "d_z": model.d_z},
        "hidden": list(model.hidden),
        "activation": model.activation,
        "meta": meta or {},
    }
    write_checkpoint(path, header, model.params)


def load_checkpoint(path):
    header, arrays = read_checkpoint(path)
    if header.get("kind") != "simulation":
        raise InputError(f"checkpoint kind '{header.get('kind')}' is not 'simulation'")
    dims = header["dims"]
    model = build_model(
        dims["d_obs"], dims["d_s"], dims["d_z"], rng=np.random.default_rng(0),
        hidden=tuple(header["hidden"]), activation=header["activation"],
    )
    for name, t in model.params.items():
        if name not in arrays:
            raise InputError(f"checkpoint missing parameter '{name}'")
        if arrays[name].shape != t.data.shape:
            raise InputError(f"checkpoint shape mismatch for '{name}'")
        t.data[...] = arrays[name]
    return model, header.get("meta", {})
