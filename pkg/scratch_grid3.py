"""Capacity sweep for variant A: does a wider net sharpen the posterior."""
import sys
import time

import numpy as np

sys.path.insert(0, "src")

from varjepa.datagen import gen_pairs, sample_sim_process
from varjepa.diagnostics import aggregated_kl, train_linear_probe
from varjepa.model import _split_head, embed
from varjepa.objective import train_run, variant_config

process = sample_sim_process(0)
from varjepa.numeric import philox_stream

data_rng = philox_stream(0, "data")
train_ds = gen_pairs(process, 8192, data_rng)
eval_ds = gen_pairs(process, 2048, data_rng)

grid = [
    ((256, 256), 512, 5e-3),
    ((256, 256), 256, 3e-3),
    ((512, 512), 512, 3e-3),
]

for hidden, batch, lr in grid:
    t0 = time.time()
    traj = []

    def hook(model, epoch):
        if epoch in (5, 10, 20, 30, 40):
            q_sx = _split_head(model.net("ctx", eval_ds.x[:512]), model.d_s)
            pv = float(np.exp(q_sx.log_var.data).mean())
            mn = float(np.linalg.norm(q_sx.mean.data.mean(axis=0)))
            mv = float(q_sx.mean.data.var(axis=0).mean())
            ov = float(np.exp(model.params["log_var_x"].data).mean())
            traj.append((epoch, pv, mn, mv, ov))
        return None

    cfg = variant_config("A", seed=0, batch_size=batch, lr=lr, hidden=hidden)
    result = train_run(cfg, train_ds, hook=hook)
    model = result.model
    sx, _, _, _ = embed(model, eval_ds.x, eval_ds.y)
    agg = aggregated_kl(sx)
    probe = train_linear_probe(sx, eval_ds.c)
    line = " ".join(f"ep{e}:pv={pv:.3f},mn={mn:.2f},mv={mv:.2f},ov={ov:.3f}"
                    for e, pv, mn, mv, ov in traj)
    print(f"hidden={hidden[0]} batch={batch} lr={lr}: agg_sx={agg:.3f} "
          f"probe={probe.eval_accuracy:.3f} ({time.time()-t0:.0f}s)\n  {line}",
          flush=True)
