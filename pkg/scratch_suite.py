"""Dry run of the acceptance ablation suite; writes one JSON of records."""
import json
import time

from varjepa.datagen import gen_pairs, sample_sim_process
from varjepa.diagnostics import epoch_diagnostics
from varjepa.numeric import philox_stream
from varjepa.objective import SigregSettings, train_run, variant_config
from varjepa.sigreg import sample_directions

process = sample_sim_process(0)
data_rng = philox_stream(0, "data")
train_ds = gen_pairs(process, 8192, data_rng)
eval_ds = gen_pairs(process, 2048, data_rng)

sig = SigregSettings()
out = {}
for variant in "ACDEGIJ":
    for seed in (0, 1, 2):
        t0 = time.time()
        cfg = variant_config(variant, seed=seed)
        proj = sample_directions(philox_stream(seed, "eval"), sig.n_directions, cfg.d_s)

        def hook(model, epoch, _cfg=cfg, _proj=proj):
            if epoch != _cfg.epochs:
                return None
            return epoch_diagnostics(model, eval_ds, _proj, epoch,
                                     ep_config=sig.ep_config())

        result = train_run(cfg, train_ds, sigreg_settings=sig, hook=hook)
        rec = result.records[-1]
        out[f"{variant}{seed}"] = {k: getattr(rec, k) for k in (
            "probe_acc_sx", "probe_acc_sy", "sx_agg_kl", "sy_agg_kl",
            "sx_sigreg_mse", "sy_sigreg_mse", "sx_cov_frob_dev", "sy_cov_frob_dev",
            "sx_mean_norm", "sy_mean_norm", "coupling_kl")}
        print(f"{variant}{seed}: acc_sx={rec.probe_acc_sx:.3f} "
              f"agg_sx={rec.sx_agg_kl:.4f} agg_sy={rec.sy_agg_kl:.4f} "
              f"mse_sx={rec.sx_sigreg_mse:.5f} ({time.time()-t0:.0f}s)", flush=True)

with open("/root/pkg/scratch_suite.json", "w") as fh:
    json.dump(out, fh, indent=1)
print("done")
