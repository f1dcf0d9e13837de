"""Margin check for criteria 4-5: A across lrs/seeds, then E/I/G."""
import sys
import time

import numpy as np

sys.path.insert(0, "src")

from varjepa.datagen import gen_pairs, sample_sim_process
from varjepa.diagnostics import aggregated_kl, train_linear_probe
from varjepa.model import embed, infer_forward
from varjepa.numeric import philox_stream
from varjepa.objective import train_run, variant_config

process = sample_sim_process(0)
data_rng = philox_stream(0, "data")
train_ds = gen_pairs(process, 8192, data_rng)
eval_ds = gen_pairs(process, 2048, data_rng)


def run(variant, seed, lr):
    t0 = time.time()
    cfg = variant_config(variant, seed=seed, batch_size=512, lr=lr,
                         hidden=(256, 256))
    result = train_run(cfg, train_ds)
    model = result.model
    rng = philox_stream(seed, "eval", index=1)
    n = eval_ds.n
    noise = (rng.normal(size=(n, cfg.d_s)), rng.normal(size=(n, cfg.d_z)),
             rng.normal(size=(n, cfg.d_s)))
    bundle = infer_forward(model, eval_ds.x, eval_ds.y, noise)
    agg = aggregated_kl(bundle.s_x.data)
    sx_mean, _, _, _ = embed(model, eval_ds.x, eval_ds.y)
    probe = train_linear_probe(sx_mean, eval_ds.c)
    print(f"{variant} seed={seed} lr={lr}: agg_samp={agg:.3f} "
          f"probe={probe.eval_accuracy:.3f} ({time.time()-t0:.0f}s)",
          flush=True)
    return agg


for lr in (4e-3, 5e-3):
    for seed in (0, 1, 2):
        run("A", seed, lr)

for variant in ("E", "I", "G"):
    for seed in (0, 1, 2):
        run(variant, seed, 5e-3)
