"""Command-line entry point.

Subcommands: phantoms, train, eval, oracle, mi, snr, masks. Options are
merged with precedence CLI flags > config file (flat `key = value` ASCII) >
defaults; the merged configuration is what gets written into the run
directory, so a run is reproducible from its directory alone.

All randomness flows from a single --seed, fanned out into independent
streams as default_rng([seed, purpose]) with purpose codes: 0 dataset
generation, 1 splitting, 2 training, 3 evaluation, 4 diagnostics, 5 baselines.
"""

from __future__ import annotations

import argparse
import csv
import os
import subprocess
import sys
import time

import numpy as np

from . import baselines, diagnostics, estimators, policynet
from .datagen import generate_phantoms, load_pgm_dataset, split_dataset, write_manifest, write_pgm
from .estimators import AcquisitionConfig
from .metrics import GAUSSIAN_11, UNIFORM_7, SsimConfig
from .policynet import ArchSpec, OptimizerState, PolicyNetwork
from .recon import ExternalTable, ZeroFilled

__version__ = "0.1.0"

SEED_DATASET, SEED_SPLIT, SEED_TRAIN, SEED_EVAL, SEED_DIAG, SEED_BASE = range(6)

DEFAULTS = {
    "mode": "greedy",
    "width": 32,
    "L": 4,
    "M": 12,
    "q": 8,
    "gamma": None,
    "epochs": 10,
    "batch_size": 16,
    "lr": 5e-5,
    "lr_schedule": "auto",
    "seed": 0,
    "phantoms": 200,
    "size": 32,
    "data_seed": None,
    "data_dir": None,
    "recon_table": None,
    "window": "gaussian",
    "q_eval": 8,
    "split": "0.6,0.2,0.2",
    "workers": 1,
    "conv_channels": "8,16",
    "dense_hidden": 64,
}


class CliError(Exception):
    def __init__(self, code, msg):
        super().__init__(msg)
        self.code = code


def _fan_rng(seed: int, purpose: int) -> np.random.Generator:
    return np.random.default_rng([seed, purpose])


def _read_config_file(path: str) -> dict:
    values = {}
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise CliError("config", f"{path}:{lineno}: expected key = value")
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
    return values


def _merge_config(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        file_values = _read_config_file(args.config)
        for key, value in file_values.items():
            if key not in cfg:
                raise CliError("config", f"unknown config key {key!r}")
            cfg[key] = value
    for key in cfg:
        arg = getattr(args, key, None)
        if arg is not None:
            cfg[key] = arg
    # normalize types (config-file values arrive as strings)
    for key in ("width", "L", "M", "q", "epochs", "batch_size", "seed",
                "phantoms", "size", "q_eval", "workers", "dense_hidden"):
        cfg[key] = int(cfg[key])
    cfg["lr"] = float(cfg["lr"])
    if cfg["gamma"] is not None:
        cfg["gamma"] = float(cfg["gamma"])
    if cfg["data_seed"] is not None:
        cfg["data_seed"] = int(cfg["data_seed"])
    return cfg


def _validate(cfg: dict) -> None:
    if cfg["mode"] not in ("greedy", "nongreedy"):
        raise CliError("config", f"unknown mode {cfg['mode']!r}")
    if cfg["mode"] == "greedy" and cfg["gamma"] is not None:
        raise CliError("config", "gamma is meaningless in greedy mode")
    if not 0 < cfg["L"] < cfg["M"] <= cfg["width"]:
        raise CliError(
            "config", f"need 0 < L({cfg['L']}) < M({cfg['M']}) <= width({cfg['width']})"
        )
    if cfg["window"] not in ("gaussian", "uniform"):
        raise CliError("config", f"unknown SSIM window {cfg['window']!r}")


def _acq_config(cfg: dict) -> AcquisitionConfig:
    gamma = cfg["gamma"] if cfg["gamma"] is not None else 1.0
    return AcquisitionConfig(
        width=cfg["width"],
        initial_budget=cfg["L"],
        total_budget=cfg["M"],
        samples_per_step=cfg["q"],
        discount=gamma if cfg["mode"] == "nongreedy" else 0.0,
        mode=cfg["mode"],
    )


def _ssim_config(cfg: dict) -> SsimConfig:
    window = GAUSSIAN_11 if cfg["window"] == "gaussian" else UNIFORM_7
    return SsimConfig(window=window)


def _scorer(cfg: dict):
    return estimators.ssim_scorer(_ssim_config(cfg))


def _load_dataset(cfg: dict):
    if cfg["data_dir"]:
        ds = load_pgm_dataset(cfg["data_dir"])
    else:
        data_seed = cfg["data_seed"] if cfg["data_seed"] is not None else cfg["seed"]
        ds = generate_phantoms(cfg["phantoms"], cfg["size"], data_seed)
    fractions = tuple(float(f) for f in cfg["split"].split(","))
    return split_dataset(ds, fractions, cfg["seed"])


def _reconstructor(cfg: dict):
    if cfg["recon_table"]:
        return ExternalTable(cfg["recon_table"])
    return ZeroFilled()


def _version_string() -> str:
    try:
        desc = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=5,
        )
        if desc.returncode == 0:
            return f"kpolicy-{__version__}+git.{desc.stdout.strip()}"
    except OSError:
        pass
    return f"kpolicy-{__version__}"


def _write_run_metadata(out: str, cfg: dict) -> None:
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "config.txt"), "w") as f:
        for key in sorted(cfg):
            f.write(f"{key} = {cfg[key]}\n")
    with open(os.path.join(out, "run_info.txt"), "w") as f:
        f.write(f"version = {_version_string()}\n")
        f.write(f"seed = {cfg['seed']}\n")


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)


def _fresh_network(cfg: dict) -> PolicyNetwork:
    arch = ArchSpec(
        input_shape=(cfg["size"], cfg["width"]),
        width=cfg["width"],
        conv_channels=tuple(int(c) for c in cfg["conv_channels"].split(",") if c),
        dense_hidden=cfg["dense_hidden"],
    )
    return PolicyNetwork.initialize(arch, _fan_rng(cfg["seed"], SEED_TRAIN))


def cmd_phantoms(args) -> int:
    cfg = _merge_config(args)
    ds = _load_dataset(cfg)
    os.makedirs(args.out, exist_ok=True)
    for item_id, img in ds.items:
        write_pgm(img, os.path.join(args.out, f"{item_id}.pgm"))
    write_manifest(ds, os.path.join(args.out, "manifest.csv"))
    print(f"wrote {len(ds)} phantoms to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _merge_config(args)
    _validate(cfg)
    acq = _acq_config(cfg)
    scorer = _scorer(cfg)
    ds = _load_dataset(cfg)
    recon = _reconstructor(cfg)
    _write_run_metadata(args.out, cfg)

    net = _fresh_network(cfg)
    opt = OptimizerState.for_network(net, cfg["lr"])
    schedule = (
        policynet.GREEDY_SCHEDULE
        if cfg["mode"] == "greedy"
        else policynet.NONGREEDY_SCHEDULE
    )
    train_rng = _fan_rng(cfg["seed"], SEED_TRAIN)
    eval_rng = _fan_rng(cfg["seed"], SEED_EVAL)

    rows = []
    log = open(os.path.join(args.out, "train.log"), "w")
    for epoch in range(1, cfg["epochs"] + 1):
        policynet.decay_learning_rate(opt, schedule, epoch)
        t0 = time.monotonic()
        stats = estimators.train_epoch(
            ds.subset("train"), net, recon, acq, opt, train_rng, scorer,
            batch_size=cfg["batch_size"],
        )
        val = estimators.evaluate(
            ds.subset("val"), net, recon, acq, cfg["q_eval"], eval_rng, scorer
        )
        rows.append([epoch, "train", f"{stats['mean_ssim']:.17g}",
                     f"{stats['mean_return']:.17g}"])
        rows.append([epoch, "val", f"{val.mean:.17g}", ""])
        policynet.save_checkpoint(
            net, opt, os.path.join(args.out, f"epoch_{epoch:02d}.kgpn")
        )
        log.write(f"epoch {epoch}: {time.monotonic() - t0:.2f} s, "
                  f"train ssim {stats['mean_ssim']:.5f}, val ssim {val.mean:.5f}\n")
        log.flush()
    log.close()
    _write_csv(os.path.join(args.out, "metrics.csv"),
               ["epoch", "split", "mean_ssim", "mean_return"], rows)

    test = estimators.evaluate(
        ds.subset("test"), net, recon, acq, cfg["q_eval"], eval_rng, scorer
    )
    _write_csv(os.path.join(args.out, "test_eval.csv"),
               ["mean_ssim", "std_ssim", "n_images"],
               [[f"{test.mean:.17g}", f"{test.std:.17g}", len(test.per_image)]])
    print(f"final test SSIM: {test.mean:.5f} +- {test.std:.5f}")
    return 0


def cmd_eval(args) -> int:
    cfg = _merge_config(args)
    _validate(cfg)
    acq = _acq_config(cfg)
    scorer = _scorer(cfg)
    ds = _load_dataset(cfg)
    recon = _reconstructor(cfg)
    net, _ = policynet.load_checkpoint(args.checkpoint)
    res = estimators.evaluate(
        ds.subset("test"), net, recon, acq, cfg["q_eval"],
        _fan_rng(cfg["seed"], SEED_EVAL), scorer,
    )
    os.makedirs(args.out, exist_ok=True)
    _write_run_metadata(args.out, cfg)
    _write_csv(os.path.join(args.out, "eval.csv"),
               ["mean_ssim", "std_ssim", "n_images", "q_eval"],
               [[f"{res.mean:.17g}", f"{res.std:.17g}",
                 len(res.per_image), cfg["q_eval"]]])
    print(f"test SSIM: {res.mean:.5f} +- {res.std:.5f}")
    return 0


def cmd_oracle(args) -> int:
    cfg = _merge_config(args)
    _validate(cfg)
    acq = _acq_config(cfg)
    scorer = _scorer(cfg)
    ds = _load_dataset(cfg)
    recon = _reconstructor(cfg)
    items = ds.subset("test")
    rng = _fan_rng(cfg["seed"], SEED_BASE)

    horizon = acq.horizon
    results = []
    rand = baselines.random_schedule(cfg["width"], cfg["L"], horizon, rng)
    for name, sched in (
        ("random", rand),
        ("equi_one", baselines.equispaced_schedule(cfg["width"], cfg["L"], horizon, "one")),
        ("equi_two", baselines.equispaced_schedule(cfg["width"], cfg["L"], horizon, "two")),
        ("na_oracle", baselines.na_oracle_schedule(items, recon, acq, scorer)),
    ):
        scores = [baselines.run_schedule(x, sched, recon, acq, scorer)
                  for _, x in items]
        results.append([name, float(np.mean(scores)), float(np.std(scores))])
    adaptive = [baselines.run_adaptive_oracle(x, recon, acq, scorer)
                for _, x in items]
    results.append(["adaptive_oracle", float(np.mean(adaptive)), float(np.std(adaptive))])

    os.makedirs(args.out, exist_ok=True)
    _write_run_metadata(args.out, cfg)
    _write_csv(os.path.join(args.out, "oracle.csv"),
               ["strategy", "mean_ssim", "std_ssim"],
               [[n, f"{m:.17g}", f"{s:.17g}"] for n, m, s in results])
    for name, mean, std in results:
        print(f"{name:16s} {mean:.5f} +- {std:.5f}")
    return 0


def cmd_mi(args) -> int:
    cfg = _merge_config(args)
    _validate(cfg)
    acq = _acq_config(cfg)
    scorer = _scorer(cfg)
    ds = _load_dataset(cfg)
    recon = _reconstructor(cfg)
    net, _ = policynet.load_checkpoint(args.checkpoint)
    snaps = diagnostics.collect_policy_snapshots(
        ds.subset("test"), net, recon, acq, cfg["q_eval"],
        _fan_rng(cfg["seed"], SEED_DIAG), scorer,
    )
    rows = []
    for snap in snaps:
        marg = diagnostics.marginal_entropy(snap)
        cond = diagnostics.conditional_entropy(snap)
        mi = marg - cond
        rows.append([snap.step, f"{marg:.17g}", f"{cond:.17g}",
                     f"{max(mi, 0.0):.17g}", f"{mi:.17g}"])
    os.makedirs(args.out, exist_ok=True)
    _write_run_metadata(args.out, cfg)
    _write_csv(os.path.join(args.out, "mi.csv"),
               ["step", "marginal_entropy", "conditional_entropy",
                "mutual_information", "mutual_information_raw"], rows)
    print(f"wrote MI for {len(rows)} steps to {args.out}/mi.csv")
    return 0


def cmd_snr(args) -> int:
    cfg = _merge_config(args)
    _validate(cfg)
    acq = _acq_config(cfg)
    scorer = _scorer(cfg)
    ds = _load_dataset(cfg)
    recon = _reconstructor(cfg)
    epochs = [int(e) for e in args.at_epochs.split(",")]
    rows = []
    for epoch in epochs:
        path = os.path.join(args.run_dir, f"epoch_{epoch:02d}.kgpn")
        net, _ = policynet.load_checkpoint(path)
        grads = diagnostics.collect_gradient_batches(
            ds.subset("train"), net, recon, acq,
            _fan_rng(cfg["seed"], SEED_DIAG), scorer,
            n_batches=args.batches, batch_size=cfg["batch_size"],
        )
        snr = diagnostics.gradient_snr(grads)
        rows.append([epoch, f"{snr:.17g}", args.batches, cfg["q"]])
        print(f"epoch {epoch}: SNR {snr:.4f}")
    os.makedirs(args.out, exist_ok=True)
    _write_run_metadata(args.out, cfg)
    _write_csv(os.path.join(args.out, "snr.csv"),
               ["epoch", "snr", "B", "q"], rows)
    return 0


def cmd_masks(args) -> int:
    cfg = _merge_config(args)
    _validate(cfg)
    acq = _acq_config(cfg)
    scorer = _scorer(cfg)
    ds = _load_dataset(cfg)
    recon = _reconstructor(cfg)
    os.makedirs(args.out, exist_ok=True)
    _write_run_metadata(args.out, cfg)

    if args.strategy:
        rng = _fan_rng(cfg["seed"], SEED_BASE)
        horizon = acq.horizon
        if args.strategy == "random":
            sched = baselines.random_schedule(cfg["width"], cfg["L"], horizon, rng)
        elif args.strategy in ("equi_one", "equi_two"):
            side = args.strategy.split("_")[1]
            sched = baselines.equispaced_schedule(cfg["width"], cfg["L"], horizon, side)
        elif args.strategy == "na_oracle":
            sched = baselines.na_oracle_schedule(ds.subset("test"), recon, acq, scorer)
        else:
            raise CliError("config", f"unknown strategy {args.strategy!r}")
        _write_csv(os.path.join(args.out, "schedule.csv"),
                   ["step", "column", "provenance"],
                   [[t, c, sched.provenance] for t, c in enumerate(sched.columns)])
        print(f"schedule ({sched.provenance}): {list(sched.columns)}")
        return 0

    if not args.checkpoint:
        raise CliError("config", "masks needs --checkpoint or --strategy")
    net, _ = policynet.load_checkpoint(args.checkpoint)
    items = ds.subset("test")
    rng = _fan_rng(cfg["seed"], SEED_DIAG)
    counts = np.zeros((acq.horizon, cfg["width"]))
    for _, x in items:
        ks, mask, xhat, score = estimators.initial_state(x, recon, acq, scorer)
        for t in range(acq.horizon):
            probs = net.forward(xhat, mask)
            a = int(policynet.sample_actions(probs, 1, rng)[0])
            counts[t, a] += 1
            mask, xhat, score = estimators._measure(x, ks, mask, a, recon, scorer)
    fractions = counts / len(items)
    rows = [[t, c, f"{fractions[t, c]:.17g}"]
            for t in range(acq.horizon) for c in range(cfg["width"])]
    _write_csv(os.path.join(args.out, "policy_heatmap.csv"),
               ["step", "column", "fraction"], rows)
    print(f"wrote policy heatmap to {args.out}/policy_heatmap.csv")
    return 0


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--mode", choices=["greedy", "nongreedy"])
    p.add_argument("--width", type=int)
    p.add_argument("--L", type=int, help="initial center-mask budget")
    p.add_argument("--M", type=int, help="total column budget")
    p.add_argument("--q", type=int, help="parallel samples per branching point")
    p.add_argument("--gamma", type=float, help="discount (nongreedy only)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--phantoms", type=int, help="number of generated phantoms")
    p.add_argument("--size", type=int, help="phantom image side")
    p.add_argument("--data-seed", dest="data_seed", type=int)
    p.add_argument("--data-dir", dest="data_dir", help="load PGM dataset instead")
    p.add_argument("--recon-table", dest="recon_table",
                   help="directory of precomputed reconstructions")
    p.add_argument("--window", choices=["gaussian", "uniform"])
    p.add_argument("--q-eval", dest="q_eval", type=int)
    p.add_argument("--split", help="train,val,test fractions")
    p.add_argument("--workers", type=int)
    p.add_argument("--conv-channels", dest="conv_channels")
    p.add_argument("--dense-hidden", dest="dense_hidden", type=int)
    p.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kpolicy")
    parser.add_argument("--version", action="version", version=_version_string())
    sub = parser.add_subparsers(dest="command", required=True)

    for name, fn in (("phantoms", cmd_phantoms), ("train", cmd_train),
                     ("oracle", cmd_oracle)):
        p = sub.add_parser(name)
        _add_common(p)
        p.set_defaults(fn=fn)

    for name, fn in (("eval", cmd_eval), ("mi", cmd_mi)):
        p = sub.add_parser(name)
        _add_common(p)
        p.add_argument("--checkpoint", required=True)
        p.set_defaults(fn=fn)

    p = sub.add_parser("snr")
    _add_common(p)
    p.add_argument("--run-dir", dest="run_dir", required=True,
                   help="training run directory with epoch checkpoints")
    p.add_argument("--at-epochs", dest="at_epochs", default="1",
                   help="comma-separated epoch numbers")
    p.add_argument("--batches", type=int, default=50)
    p.set_defaults(fn=cmd_snr)

    p = sub.add_parser("masks")
    _add_common(p)
    p.add_argument("--checkpoint", help="policy checkpoint for the heatmap")
    p.add_argument("--strategy",
                   choices=["random", "equi_one", "equi_two", "na_oracle"],
                   help="emit a baseline schedule instead")
    p.set_defaults(fn=cmd_masks)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except CliError as exc:
        print(f"error code={exc.code} msg={exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error code=runtime msg={exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
