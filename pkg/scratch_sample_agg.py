"""Sample-based aggregated KL for candidate variant-A configs."""
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

grid = [
    ((128, 128), 512, 8e-3),
    ((128, 128), 512, 1e-2),
    ((256, 256), 512, 5e-3),
    ((256, 256), 512, 8e-3),
]

for hidden, batch, lr in grid:
    t0 = time.time()
    cfg = variant_config("A", seed=0, batch_size=batch, lr=lr, hidden=hidden)
    result = train_run(cfg, train_ds)
    model = result.model

    rng = philox_stream(cfg.seed, "eval", index=1)
    n = eval_ds.n
    noise = (rng.normal(size=(n, cfg.d_s)), rng.normal(size=(n, cfg.d_z)),
             rng.normal(size=(n, cfg.d_s)))
    bundle = infer_forward(model, eval_ds.x, eval_ds.y, noise)
    agg_samp = aggregated_kl(bundle.s_x.data)
    agg_samp_sy = aggregated_kl(bundle.s_y.data)

    sx_mean, _, _, _ = embed(model, eval_ds.x, eval_ds.y)
    agg_mean = aggregated_kl(sx_mean)
    probe = train_linear_probe(sx_mean, eval_ds.c)
    print(f"hidden={hidden[0]} batch={batch} lr={lr}: "
          f"agg_samp={agg_samp:.3f} agg_samp_sy={agg_samp_sy:.3f} "
          f"agg_mean={agg_mean:.3f} probe={probe.eval_accuracy:.3f} "
          f"({time.time()-t0:.0f}s)", flush=True)
