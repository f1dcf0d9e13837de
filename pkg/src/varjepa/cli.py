"""Command-line pipelines for data, training, ablations, and probing.

Commands: gen, train, ablate, probe, report. Every command is
deterministic for a given seed, writes its artifacts into a run
directory with a manifest, and refuses to clobber an existing run
unless --overwrite is passed. Exit codes: 0 success, 2 usage or
configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .datagen import (
    corrupt_images,
    gen_pairs,
    gen_sim_tabular,
    load_pair_dataset,
    load_tabular_dataset,
    read_idx,
    sample_sim_process,
    save_pair_dataset,
    save_tabular_dataset,
)
from .diagnostics import (
    DIAG_COLUMNS,
    ProbeConfig,
    epoch_diagnostics,
    risk_coverage,
    roc_auc,
    selective_accuracy,
    train_linear_probe,
    write_curve_csv,
    write_diagnostics_csv,
)
from .model import save_checkpoint
from .numeric import InputError, NumericalFailure, philox_stream
from .objective import (
    VARIANT_IDS,
    SigregSettings,
    train_run,
    variant_config,
    write_losses_csv,
)
from .sigreg import sample_directions
from .tabular import (
    TabularConfig,
    extract_embeddings_uncertainty,
    load_tabular_checkpoint,
    nearest_rank_p90,
    save_tabular_checkpoint,
    train_tabular,
    write_embeddings_csv,
)

__all__ = ["main", "config_hash", "TABLE_METRICS"]

TABLE_METRICS = (
    "probe_acc_sx", "sx_agg_kl", "sx_sigreg_mse", "sx_cov_frob_dev",
    "sx_mean_norm", "probe_acc_sy", "sy_agg_kl", "sy_sigreg_mse",
    "sy_cov_frob_dev", "sy_mean_norm", "coupling_kl",
)

_SELECTIVE_DROPS = (0.0, 0.1, 0.2, 0.5)

_SIM_KEYS = {
    "kind", "variant", "seed", "epochs", "batch_size", "lr", "weight_decay",
    "d_s", "d_z", "hidden", "activation", "diag_every",
}
_SIM_NESTED = {
    "sigreg": {"n_directions", "n_frequencies", "max_frequency", "weighting"},
    "probe": {"epochs", "lr", "weight_decay", "batch_size", "seed"},
}
_TAB_KEYS = {
    "kind", "seed", "d", "d_z", "hidden", "activation", "lr", "weight_decay",
    "batch_size", "epochs", "k_targets", "ratios", "alpha_rec", "alpha_gen",
    "alpha_kl_sx", "alpha_kl_z", "alpha_kl_sy", "anneal_epochs",
    "probe_every", "patience", "probe_drop", "aggregation",
}


def config_hash(cfg):
    """sha256 of the canonical JSON form; key order never matters."""
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def _collect_unknown(cfg, allowed, nested, prefix=""):
    bad = []
    for key, value in cfg.items():
        if key in nested:
            if isinstance(value, dict):
                bad += _collect_unknown(value, nested[key], {},
                                        prefix=f"{prefix}{key}.")
            else:
                bad.append(f"{prefix}{key} (expected an object)")
        elif key not in allowed:
            bad.append(prefix + key)
    return bad


def _load_config(path):
    p = Path(path)
    if not p.exists():
        raise InputError(f"no config file at {p}")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as err:
        raise InputError(f"config is not valid JSON: {err}") from err
    if not isinstance(cfg, dict):
        raise InputError("config must be a JSON object")
    kind = cfg.get("kind")
    if kind == "simulation":
        bad = _collect_unknown(cfg, _SIM_KEYS, _SIM_NESTED)
    elif kind == "tabular":
        bad = _collect_unknown(cfg, _TAB_KEYS, {})
    else:
        raise InputError(
            f"config kind '{kind}' must be 'simulation' or 'tabular'")
    if bad:
        raise InputError("unknown config keys: " + ", ".join(sorted(bad)))
    return cfg


def _prepare_run_dir(out_dir, overwrite):
    out = Path(out_dir)
    if (out / "manifest.json").exists() and not overwrite:
        raise InputError(f"{out} already holds a run; pass --overwrite")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out, command, cfg, seeds, artifacts, extra=None):
    manifest = {
        "command": command,
        "config_hash": config_hash(cfg),
        "seeds": list(seeds),
        "created": datetime.now(timezone.utc).isoformat(),
        "version": __version__,
        "artifacts": {k: str(v) for k, v in artifacts.items()},
    }
    if extra:
        manifest.update(extra)
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ---- gen ------------------------------------------------------------------


def _cmd_gen(args):
    out = Path(args.out)
    if args.kind in ("pairs", "sim-tabular") and args.n < 1:
        raise InputError("--n must be >= 1")
    if args.kind == "pairs":
        process = sample_sim_process(args.seed)
        rng = philox_stream(args.seed, "data")
        train = gen_pairs(process, args.n, rng)
        train.seed = args.seed
        evalset = gen_pairs(process, args.n_eval, rng)
        evalset.seed = args.seed
        save_pair_dataset(train, out / "train", overwrite=args.overwrite)
        save_pair_dataset(evalset, out / "eval", overwrite=args.overwrite)
        _write_json(out / "manifest.json", {
            "kind": "pairs", "seed": args.seed, "n": args.n,
            "n_eval": args.n_eval, "version": __version__,
            "files": {"train": "train", "eval": "eval"},
        })
        counts = np.bincount(train.c, minlength=2)
        print(f"pairs: n={train.n} (+{evalset.n} eval) d_obs={train.d_obs} "
              f"labels={counts.tolist()}")
    elif args.kind == "sim-tabular":
        ds = gen_sim_tabular(args.seed, args.n)
        save_tabular_dataset(ds, out, overwrite=args.overwrite)
        counts = np.bincount(ds.label, minlength=3)
        print(f"sim-tabular: n={ds.n} features={ds.n_features} "
              f"labels={counts.tolist()}")
    elif args.kind == "corrupt-images":
        if not args.images or not args.u_file:
            raise InputError("corrupt-images needs --images and --u-file")
        raw = read_idx(args.images)
        images = raw.reshape(raw.shape[0], -1).astype(np.float64)
        if raw.dtype == np.uint8:
            images = images / 255.0
        u = np.loadtxt(args.u_file, dtype=np.float64, ndmin=1)
        rng = philox_stream(args.seed, "data")
        blended = corrupt_images(images, u, args.lam, rng)
        if (out / "manifest.json").exists() and not args.overwrite:
            raise InputError(f"{out} already holds a dataset; pass --overwrite")
        out.mkdir(parents=True, exist_ok=True)
        (out / "images.f64").write_bytes(
            np.ascontiguousarray(blended).astype("<f8").tobytes())
        _write_json(out / "manifest.json", {
            "kind": "corrupt-images", "seed": args.seed, "lam": args.lam,
            "shape": list(blended.shape), "source": str(args.images),
            "version": __version__, "files": {"images": "images.f64"},
        })
        print(f"corrupt-images: n={blended.shape[0]} d={blended.shape[1]} "
              f"lam={args.lam}")
    return 0


# ---- train ------------------------------------------------------------------


def _diag_epochs(total, every):
    if total < 1:
        return set()
    if every < 1:
        return {total}
    chosen = {e for e in range(1, total + 1) if e == 1 or e % every == 0}
    chosen.add(total)
    return chosen


def _run_simulation(cfg, data_dir, out_dir, command, overwrite):
    """Train one variant, write the run directory, return the final record."""
    out = _prepare_run_dir(out_dir, overwrite)
    data = Path(data_dir)
    train_ds = load_pair_dataset(data / "train")
    eval_ds = load_pair_dataset(data / "eval")

    overrides = {}
    for key in ("epochs", "batch_size", "lr", "weight_decay", "d_s", "d_z",
                "activation"):
        if key in cfg:
            overrides[key] = cfg[key]
    if "hidden" in cfg:
        overrides["hidden"] = tuple(cfg["hidden"])
    config = variant_config(cfg.get("variant", "A"),
                            seed=int(cfg.get("seed", 0)), **overrides)
    sig = SigregSettings(**cfg.get("sigreg", {}))
    probe_cfg = ProbeConfig(**cfg["probe"]) if "probe" in cfg else None

    projections = sample_directions(
        philox_stream(config.seed, "eval"), sig.n_directions, config.d_s)
    ep_cfg = sig.ep_config()
    diag_at = _diag_epochs(config.epochs, int(cfg.get("diag_every", 0)))

    def hook(model, epoch):
        if epoch not in diag_at:
            return None
        return epoch_diagnostics(model, eval_ds, projections, epoch=epoch,
                                 probe_config=probe_cfg, ep_config=ep_cfg)

    result = train_run(config, train_ds, sigreg_settings=sig, hook=hook)

    write_losses_csv(result.loss_rows, out / "losses.csv")
    write_diagnostics_csv(result.records, out / "diagnostics.csv")
    save_checkpoint(result.model, out / "checkpoint.bin", meta={
        "variant": config.variant, "seed": config.seed,
        "epochs": config.epochs, "config_hash": config_hash(cfg),
    })
    _write_json(out / "config.json", cfg)
    _write_manifest(out, command, cfg, [config.seed], {
        "config": "config.json", "losses": "losses.csv",
        "diagnostics": "diagnostics.csv", "checkpoint": "checkpoint.bin",
    }, extra={"kind": "simulation", "data": str(data),
              "variant": config.variant})
    return result.records[-1] if result.records else None


_TAB_DIAG_COLUMNS = ("epoch", "val_accuracy", "filtered_val_accuracy")


def _run_tabular(cfg, data_dir, out_dir, command, overwrite):
    out = _prepare_run_dir(out_dir, overwrite)
    dataset = load_tabular_dataset(data_dir)
    kwargs = {k: v for k, v in cfg.items() if k != "kind"}
    if "hidden" in kwargs:
        kwargs["hidden"] = tuple(kwargs["hidden"])
    if "ratios" in kwargs:
        kwargs["ratios"] = tuple(kwargs["ratios"])
    config = TabularConfig(**kwargs)

    result = train_tabular(config, dataset)

    write_losses_csv(result.loss_rows, out / "losses.csv")
    lines = [",".join(_TAB_DIAG_COLUMNS)]
    for rec in result.probe_records:
        lines.append(f"{rec.epoch},{repr(float(rec.val_accuracy))},"
                     f"{repr(float(rec.filtered_val_accuracy))}")
    (out / "diagnostics.csv").write_text("\n".join(lines) + "\n")
    save_tabular_checkpoint(result.model, out / "checkpoint.bin", meta={
        "seed": config.seed, "epochs": config.epochs,
        "best_epoch": result.best_epoch, "config_hash": config_hash(cfg),
        "aggregation": config.aggregation,
    })
    _write_json(out / "config.json", cfg)
    _write_manifest(out, command, cfg, [config.seed], {
        "config": "config.json", "losses": "losses.csv",
        "diagnostics": "diagnostics.csv", "checkpoint": "checkpoint.bin",
    }, extra={"kind": "tabular", "data": str(Path(data_dir))})
    return result


def _cmd_train(args):
    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if cfg["kind"] == "simulation":
        record = _run_simulation(cfg, args.data, args.out,
                                 _command_line(), args.overwrite)
        if record is not None:
            print(f"train: done, final probe_acc_sx="
                  f"{record.probe_acc_sx:.3f} "
                  f"agg_kl_sx={record.sx_agg_kl:.3f}")
        else:
            print("train: done")
    else:
        result = _run_tabular(cfg, args.data, args.out,
                              _command_line(), args.overwrite)
        if result.probe_records:
            last = result.probe_records[-1]
            print(f"train: done, best_epoch={result.best_epoch} "
                  f"filtered_val_acc={last.filtered_val_accuracy:.3f}")
        else:
            print("train: done")
    return 0


# ---- ablate -----------------------------------------------------------------


def _parse_suite(raw):
    ids = [c for c in raw.upper() if c.isalpha()]
    if not ids:
        raise InputError("suite must name at least one variant")
    seen = []
    for c in ids:
        if c not in VARIANT_IDS:
            raise InputError(f"unknown variant '{c}' (valid: {VARIANT_IDS})")
        if c not in seen:
            seen.append(c)
    return [c for c in VARIANT_IDS if c in seen]


def _format_cell(x):
    return repr(float(x))


def write_table_csv(rows, path):
    """rows: list of (variant, n_seeds, {metric: (mean, std)})."""
    header = ["variant", "seeds"]
    for m in TABLE_METRICS:
        header += [f"{m}_mean", f"{m}_std"]
    lines = [",".join(header)]
    for variant, n_seeds, stats in rows:
        cells = [variant, str(n_seeds)]
        for m in TABLE_METRICS:
            mean, std = stats[m]
            cells += [_format_cell(mean), _format_cell(std)]
        lines.append(",".join(cells))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _cmd_ablate(args):
    suite = _parse_suite(args.suite)
    out = Path(args.out)
    if (out / "table.csv").exists() and not args.overwrite:
        raise InputError(f"{out} already holds a table; pass --overwrite")
    out.mkdir(parents=True, exist_ok=True)

    data_dir = out / "data"
    process = sample_sim_process(args.data_seed)
    rng = philox_stream(args.data_seed, "data")
    train = gen_pairs(process, args.n, rng)
    train.seed = args.data_seed
    evalset = gen_pairs(process, args.n_eval, rng)
    evalset.seed = args.data_seed
    save_pair_dataset(train, data_dir / "train", overwrite=True)
    save_pair_dataset(evalset, data_dir / "eval", overwrite=True)

    jobs = []
    for variant in suite:
        for seed in range(args.seeds):
            cfg = {"kind": "simulation", "variant": variant, "seed": seed}
            if args.epochs is not None:
                cfg["epochs"] = args.epochs
            jobs.append((variant, seed, cfg))

    def run_one(job):
        variant, seed, cfg = job
        run_dir = out / "runs" / f"{variant}{seed}"
        try:
            record = _run_simulation(cfg, data_dir, run_dir,
                                     _command_line(), True)
            return variant, seed, record, None
        except Exception as err:  # noqa: BLE001 - cell-level isolation
            return variant, seed, None, f"{type(err).__name__}: {err}"

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(run_one, jobs))
    else:
        results = [run_one(j) for j in jobs]

    by_variant = {v: [] for v in suite}
    failures = {}
    for variant, seed, record, error in results:
        if error is None and record is not None:
            by_variant[variant].append(record)
        else:
            failures[f"{variant}{seed}"] = error or "no diagnostics emitted"
            print(f"ablate: run {variant}{seed} failed: {error}",
                  file=sys.stderr)

    rows = []
    for variant in suite:
        records = by_variant[variant]
        stats = {}
        for m in TABLE_METRICS:
            vals = np.array([getattr(r, m) for r in records])
            if vals.size == 0:
                stats[m] = (float("nan"), float("nan"))
            elif vals.size == 1:
                stats[m] = (float(vals[0]), 0.0)
            else:
                stats[m] = (float(vals.mean()), float(vals.std(ddof=1)))
        rows.append((variant, len(records), stats))
    write_table_csv(rows, out / "table.csv")

    cfg_echo = {"suite": "".join(suite), "seeds": args.seeds,
                "data_seed": args.data_seed, "n": args.n,
                "n_eval": args.n_eval, "epochs": args.epochs}
    _write_manifest(out, _command_line(), cfg_echo,
                    list(range(args.seeds)),
                    {"table": "table.csv", "data": "data"},
                    extra={"kind": "ablation", "failures": failures})
    print(f"ablate: {len(results) - len(failures)}/{len(results)} runs "
          f"succeeded, table at {out / 'table.csv'}")
    return 0


# ---- probe ------------------------------------------------------------------


def _cmd_probe(args):
    run_dir = Path(args.run_dir)
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.exists():
        raise InputError(f"no manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("kind") != "tabular":
        raise InputError("probe expects a run produced by a tabular config")
    ckpt = run_dir / manifest["artifacts"]["checkpoint"]
    if not ckpt.exists():
        raise InputError(f"missing checkpoint {ckpt}")

    out = Path(args.out) if args.out else run_dir / "probe"
    if (out / "summary.json").exists() and not args.overwrite:
        raise InputError(f"{out} already holds probe output; pass --overwrite")
    out.mkdir(parents=True, exist_ok=True)

    model, meta = load_tabular_checkpoint(ckpt)
    dataset = load_tabular_dataset(manifest["data"])
    cfg = json.loads((run_dir / "config.json").read_text())
    seed = int(cfg.get("seed", 0))
    aggregation = cfg.get("aggregation", TabularConfig().aggregation)

    order = philox_stream(seed, "shuffle").permutation(dataset.n)
    n_train = int(0.8 * dataset.n)
    train_idx, val_idx = order[:n_train], order[n_train:]

    emb_tr, _ = extract_embeddings_uncertainty(model, dataset, aggregation,
                                               indices=train_idx)
    emb_va, unc_va = extract_embeddings_uncertainty(model, dataset,
                                                    aggregation,
                                                    indices=val_idx)
    probe = train_linear_probe(emb_tr, dataset.label[train_idx])
    pred = probe.predict(emb_va)
    labels = dataset.label[val_idx]
    correct = pred == labels

    selective = [(d, selective_accuracy(pred, labels, unc_va, d))
                 for d in _SELECTIVE_DROPS]
    write_curve_csv(selective, out / "selective.csv",
                    header=("drop", "accuracy"))
    write_curve_csv(risk_coverage(correct, unc_va),
                    out / "risk_coverage.csv")

    u_val = dataset.u[val_idx]
    threshold = float(nearest_rank_p90(u_val.reshape(1, -1))[0])
    positives = u_val >= threshold
    if positives.all() or not positives.any():
        auc = float("nan")
    else:
        auc = roc_auc(unc_va, positives)

    summary = {
        "plain_accuracy": float(np.mean(correct)),
        "auc_high_ambiguity": auc,
        "ambiguity_threshold": threshold,
        "positive_definition": "u >= value at nearest-rank 0.9 quantile",
        "n_val": int(val_idx.size),
        "aggregation": aggregation,
        "selective": {repr(float(d)): float(a) for d, a in selective},
    }
    _write_json(out / "summary.json", summary)

    if args.embeddings:
        emb, unc = extract_embeddings_uncertainty(model, dataset, aggregation)
        write_embeddings_csv(emb, unc, dataset.label,
                             out / "embeddings.csv")

    print(f"probe: accuracy={summary['plain_accuracy']:.3f} "
          f"auc={auc:.3f} -> {out}")
    return 0


# ---- report -----------------------------------------------------------------


def _fmt_pm(mean, std):
    if np.isnan(mean):
        return "failed"
    return f"{mean:.4g} ± {std:.3g}"


def _report_table(table_path, out_path):
    rows = []
    with open(table_path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        for line in fh:
            rows.append(dict(zip(header, line.strip().split(","))))
    lines = ["# Ablation summary", ""]
    lines.append("| Variant | Seeds | Acc(s_x) | KL_agg(s_x) | Penalty-MSE(s_x) "
                 "| Acc(s_y) | KL_agg(s_y) | Coupling KL |")
    lines.append("|---|---|---|---|---|---|---|---|")
    for row in rows:
        def pm(metric, row=row):
            return _fmt_pm(float(row[f"{metric}_mean"]),
                           float(row[f"{metric}_std"]))
        lines.append(
            f"| {row['variant']} | {row['seeds']} | {pm('probe_acc_sx')} "
            f"| {pm('sx_agg_kl')} | {pm('sx_sigreg_mse')} "
            f"| {pm('probe_acc_sy')} | {pm('sy_agg_kl')} "
            f"| {pm('coupling_kl')} |")
    Path(out_path).write_text("\n".join(lines) + "\n")


def _report_run(run_dir, out_path):
    run = Path(run_dir)
    manifest = json.loads((run / "manifest.json").read_text())
    lines = [f"# Run report: {run.name}", ""]
    lines.append(f"- kind: {manifest.get('kind')}")
    lines.append(f"- config hash: `{manifest.get('config_hash')}`")
    lines.append(f"- seeds: {manifest.get('seeds')}")
    diag = run / "diagnostics.csv"
    if diag.exists():
        body = diag.read_text().strip().split("\n")
        if len(body) > 1:
            header = body[0].split(",")
            last = body[-1].split(",")
            lines.append("")
            lines.append("Final diagnostics row:")
            lines.append("")
            for name, value in zip(header, last):
                lines.append(f"- {name}: {value}")
    summary = run / "probe" / "summary.json"
    if summary.exists():
        s = json.loads(summary.read_text())
        lines.append("")
        lines.append("Probe summary:")
        lines.append("")
        lines.append(f"- plain accuracy: {s['plain_accuracy']}")
        lines.append(f"- high-ambiguity AUC: {s['auc_high_ambiguity']}")
    Path(out_path).write_text("\n".join(lines) + "\n")


def _cmd_report(args):
    target = Path(args.path)
    if target.is_file() and target.suffix == ".csv":
        out = Path(args.out) if args.out else target.with_name("report.md")
        _report_table(target, out)
    elif target.is_dir() and (target / "table.csv").exists():
        out = Path(args.out) if args.out else target / "report.md"
        _report_table(target / "table.csv", out)
    elif target.is_dir() and (target / "manifest.json").exists():
        out = Path(args.out) if args.out else target / "report.md"
        _report_run(target, out)
    else:
        raise InputError(f"{target} is neither a run directory nor a table")
    print(f"report: wrote {out}")
    return 0


# ---- entry point ------------------------------------------------------------

_ARGV = None


def _command_line():
    return ["varjepa"] + list(_ARGV if _ARGV is not None else sys.argv[1:])


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="varjepa",
        description="Latent-pair model pipelines: data, training, ablations, "
                    "probing, reports.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a synthetic dataset")
    gen.add_argument("kind", choices=("pairs", "sim-tabular",
                                      "corrupt-images"))
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--n", type=int, default=8192)
    gen.add_argument("--n-eval", type=int, default=2048)
    gen.add_argument("--images", help="IDX image file (corrupt-images)")
    gen.add_argument("--u-file", help="text file, one score per line")
    gen.add_argument("--lam", type=float, default=1.0)
    gen.add_argument("--out", required=True)
    gen.add_argument("--overwrite", action="store_true")
    gen.set_defaults(func=_cmd_gen)

    train = sub.add_parser("train", help="train one model from a JSON config")
    train.add_argument("--config", required=True)
    train.add_argument("--data", required=True)
    train.add_argument("--out", required=True)
    train.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
    train.add_argument("--overwrite", action="store_true")
    train.set_defaults(func=_cmd_train)

    ablate = sub.add_parser("ablate", help="run a variant suite and aggregate")
    ablate.add_argument("--suite", required=True,
                        help="variant letters, e.g. ACDJ or A,C,D,J")
    ablate.add_argument("--seeds", type=int, default=3)
    ablate.add_argument("--data-seed", type=int, default=0)
    ablate.add_argument("--n", type=int, default=8192)
    ablate.add_argument("--n-eval", type=int, default=2048)
    ablate.add_argument("--epochs", type=int, default=None)
    ablate.add_argument("--jobs", type=int, default=1)
    ablate.add_argument("--out", required=True)
    ablate.add_argument("--overwrite", action="store_true")
    ablate.set_defaults(func=_cmd_ablate)

    probe = sub.add_parser("probe", help="selective evaluation of a run")
    probe.add_argument("run_dir")
    probe.add_argument("--out", default=None)
    probe.add_argument("--embeddings", action="store_true",
                       help="also write embeddings.csv (large)")
    probe.add_argument("--overwrite", action="store_true")
    probe.set_defaults(func=_cmd_probe)

    report = sub.add_parser("report", help="markdown summary of a run or table")
    report.add_argument("path")
    report.add_argument("--out", default=None)
    report.set_defaults(func=_cmd_report)

    return parser


def main(argv=None):
    global _ARGV
    _ARGV = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    try:
        args = parser.parse_args(_ARGV)
        return args.func(args)
    except InputError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except NumericalFailure as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 3
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
