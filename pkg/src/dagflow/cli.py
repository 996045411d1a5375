"""Command-line pipeline: generate data, train the sampler, draw posterior
DAGs, evaluate them, and compare against the exact enumerated posterior.

Option precedence is CLI flag > JSON config file (--config) > built-in
default, and the merged configuration is echoed into the output directory
for provenance.  All randomness derives from one --seed through a splittable
seed sequence.  Exit codes: 0 success, 2 configuration/path errors, 3
numeric failures.  DGF_THREADS caps the linear-algebra thread pool.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


class CliConfigError(ValueError):
    """Bad flags, paths, or config-file contents."""


COMMON_DEFAULTS = {"out": "out", "config": None, "seed": 0}

DEFAULTS = {
    "gen-data": {
        **COMMON_DEFAULTS,
        "d": 5, "n": 100, "model": "lingauss", "expected_edges": None,
        "heldout_n": 0, "num_regimes": 0, "arity": 2, "noise_var": 1.0,
        "force": False,
    },
    "train": {
        **COMMON_DEFAULTS,
        "dataset": None, "score": "bge", "steps": 2000, "batch": 256,
        "eps": 0.1, "target_period": 1000, "lr": 1e-4, "lr_schedule": "constant",
        "hidden_dim": 128, "layers": 3, "num_envs": 8, "buffer_capacity": 100_000,
        "min_buffer": None, "residual_clip": 20.0, "log_every": 100,
        "intervention_mask": None, "standardize": False,
    },
    "sample": {
        **COMMON_DEFAULTS,
        "checkpoint": None, "n": 1000,
    },
    "evaluate": {
        **COMMON_DEFAULTS,
        "samples": None, "ground_truth": None, "heldout": None,
        "heldout_mask": None, "dataset": None, "score": "bge",
        "intervention_mask": None, "num_bootstrap": 1000, "standardize": False,
    },
    "compare-exact": {
        **COMMON_DEFAULTS,
        "checkpoint": None, "samples": None, "dataset": None, "score": "bge",
        "n": 1000, "intervention_mask": None, "standardize": False,
    },
}


def build_parser() -> argparse.ArgumentParser:
    sup = argparse.SUPPRESS
    parser = argparse.ArgumentParser(prog="dagflow", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, seed_required=False):
        p.add_argument("--seed", type=int, default=sup, required=seed_required)
        p.add_argument("--out", default=sup)
        p.add_argument("--config", default=sup)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset and ground truth")
    add_common(p)
    p.add_argument("--d", type=int, default=sup)
    p.add_argument("--n", type=int, default=sup)
    p.add_argument("--model", choices=["lingauss", "discrete"], default=sup)
    p.add_argument("--expected-edges", type=float, default=sup)
    p.add_argument("--heldout-n", type=int, default=sup)
    p.add_argument("--num-regimes", type=int, default=sup,
                   help="discrete only: 1 observational + k-1 intervention regimes")
    p.add_argument("--arity", type=int, default=sup)
    p.add_argument("--noise-var", type=float, default=sup)
    p.add_argument("--force", action="store_true", default=sup)

    p = sub.add_parser("train", help="train the sampler on a dataset")
    add_common(p, seed_required=True)
    p.add_argument("--dataset", default=sup)
    p.add_argument("--score", choices=["bge", "bde", "bde-int"], default=sup)
    p.add_argument("--steps", type=int, default=sup)
    p.add_argument("--batch", type=int, default=sup)
    p.add_argument("--eps", type=float, default=sup)
    p.add_argument("--target-period", type=int, default=sup)
    p.add_argument("--lr", type=float, default=sup)
    p.add_argument("--lr-schedule", choices=["constant", "cosine"], default=sup)
    p.add_argument("--hidden-dim", type=int, default=sup)
    p.add_argument("--layers", type=int, default=sup)
    p.add_argument("--num-envs", type=int, default=sup)
    p.add_argument("--buffer-capacity", type=int, default=sup)
    p.add_argument("--min-buffer", type=int, default=sup)
    p.add_argument("--residual-clip", type=float, default=sup,
                   help="gradient residual clamp; nan disables")
    p.add_argument("--log-every", type=int, default=sup)
    p.add_argument("--intervention-mask", default=sup)
    p.add_argument("--standardize", action="store_true", default=sup)

    p = sub.add_parser("sample", help="draw posterior DAG samples from a checkpoint")
    add_common(p, seed_required=True)
    p.add_argument("--checkpoint", default=sup)
    p.add_argument("--n", type=int, default=sup)

    p = sub.add_parser("evaluate", help="score a sample file against a ground truth")
    add_common(p)
    p.add_argument("--samples", default=sup)
    p.add_argument("--ground-truth", default=sup)
    p.add_argument("--heldout", default=sup)
    p.add_argument("--heldout-mask", default=sup)
    p.add_argument("--dataset", default=sup)
    p.add_argument("--score", choices=["bge", "bde", "bde-int"], default=sup)
    p.add_argument("--intervention-mask", default=sup)
    p.add_argument("--num-bootstrap", type=int, default=sup)
    p.add_argument("--standardize", action="store_true", default=sup)

    p = sub.add_parser("compare-exact",
                       help="compare sampled feature marginals with the exact posterior")
    add_common(p)
    p.add_argument("--checkpoint", default=sup)
    p.add_argument("--samples", default=sup)
    p.add_argument("--dataset", default=sup)
    p.add_argument("--score", choices=["bge", "bde", "bde-int"], default=sup)
    p.add_argument("--n", type=int, default=sup)
    p.add_argument("--intervention-mask", default=sup)
    p.add_argument("--standardize", action="store_true", default=sup)

    return parser


def merge_options(command: str, explicit: dict) -> dict:
    """defaults < config file < explicit flags."""
    merged = dict(DEFAULTS[command])
    config_path = explicit.get("config")
    if config_path is not None:
        path = Path(config_path)
        if not path.exists():
            raise CliConfigError(f"config file not found: {path}")
        try:
            file_cfg = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise CliConfigError(f"config file is not valid JSON: {e}") from e
        unknown = set(file_cfg) - set(merged)
        if unknown:
            raise CliConfigError(f"unknown config keys for {command}: {sorted(unknown)}")
        merged.update(file_cfg)
    merged.update(explicit)
    return merged


def _require_file(opts: dict, key: str) -> Path:
    value = opts.get(key)
    if value is None:
        raise CliConfigError(f"--{key.replace('_', '-')} is required")
    path = Path(value)
    if not path.exists():
        raise CliConfigError(f"{key.replace('_', '-')} path does not exist: {path}")
    return path


def _prepare_out(opts: dict, command: str) -> Path:
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    echo = {k: v for k, v in opts.items() if k != "config"}
    echo["command"] = command
    (out / "config.json").write_text(json.dumps(echo, indent=2, sort_keys=True) + "\n")
    return out


def _load_training_inputs(opts: dict):
    from . import datagen, scores

    data_path = _require_file(opts, "dataset")
    variant = opts["score"]
    kind = scores.CONTINUOUS if variant == "bge" else scores.DISCRETE
    mask_path = opts.get("intervention_mask")
    if variant == "bde-int" and mask_path is None:
        guess = data_path.with_name(data_path.stem + "_mask.csv")
        if not guess.exists():
            raise CliConfigError("bde-int needs --intervention-mask (or a sibling *_mask.csv)")
        mask_path = guess
    data = scores.load_dataset_csv(data_path, kind, mask_path)
    if opts.get("standardize"):
        data = datagen.standardize(data)
    scorer = scores.make_scorer(data, scores.ScorerConfig(variant=variant))
    return data, scorer


def _load_samples_jsonl(path: Path):
    from . import graph

    samples = []
    for line in path.read_text().splitlines():
        if line.strip():
            samples.append(graph.graph_from_json(json.loads(line)))
    if not samples:
        raise CliConfigError(f"no samples found in {path}")
    return samples


# -- subcommands -------------------------------------------------------------


def cmd_gen_data(opts: dict) -> int:
    from . import datagen, scores

    out = _prepare_out(opts, "gen-data")
    targets = [out / "data.csv", out / "ground_truth.json"]
    if not opts["force"]:
        for t in targets:
            if t.exists():
                raise CliConfigError(f"refusing to overwrite {t} (use --force)")

    d = opts["d"]
    expected = opts["expected_edges"]
    if expected is None:
        expected = 2.0 * d
    if not 0 <= expected <= d * (d - 1) / 2:
        raise CliConfigError(
            f"--expected-edges must lie in [0, {d * (d - 1) // 2}] for d={d}; "
            f"got {expected} (pass --expected-edges explicitly for small d)")
    seeds = np.random.SeedSequence(opts["seed"]).spawn(4)
    rng_graph, rng_mech, rng_data, rng_heldout = map(np.random.default_rng, seeds)

    g = datagen.sample_er_dag(d, expected, rng_graph)
    if opts["model"] == "lingauss":
        gt = datagen.make_linear_gaussian(g, rng_mech, noise_var=opts["noise_var"])
        data = datagen.sample_linear_gaussian(gt, opts["n"], rng_data)
        heldout = (datagen.sample_linear_gaussian(gt, opts["heldout_n"], rng_heldout)
                   if opts["heldout_n"] else None)
        scores.save_dataset_csv(data, out / "data.csv")
    else:
        gt = datagen.make_discrete(g, rng_mech, arity=opts["arity"])
        k = opts["num_regimes"]
        if k and k > 0:
            per = [opts["n"] // k + (1 if i < opts["n"] % k else 0) for i in range(k)]
            uniform = [1.0 / opts["arity"]] * opts["arity"]
            regimes = [datagen.Regime(per[0], {})]
            regimes += [datagen.Regime(per[i], {(i - 1) % d: uniform})
                        for i in range(1, k)]
            data = datagen.sample_interventional(gt, regimes, rng_data)
            scores.save_dataset_csv(data, out / "data.csv", out / "intervention_mask.csv")
        else:
            data = datagen.sample_discrete(gt, opts["n"], rng_data)
            scores.save_dataset_csv(data, out / "data.csv")
        heldout = (datagen.sample_discrete(gt, opts["heldout_n"], rng_heldout)
                   if opts["heldout_n"] else None)
    if heldout is not None:
        scores.save_dataset_csv(heldout, out / "heldout.csv")
    datagen.save_ground_truth(gt, out / "ground_truth.json")
    print(f"wrote {out / 'data.csv'} ({data.num_samples} x {d}, {opts['model']})")
    return EXIT_OK


def cmd_train(opts: dict) -> int:
    from . import policy, trainer

    _, scorer = _load_training_inputs(opts)
    out = _prepare_out(opts, "train")
    clip = opts["residual_clip"]
    if clip is not None and math.isnan(clip):  # nan disables clipping
        clip = None
    pcfg = policy.PolicyConfig(n_nodes=scorer.data.num_variables,
                               hidden_dim=opts["hidden_dim"], num_layers=opts["layers"])
    tcfg = trainer.TrainConfig(
        steps=opts["steps"], batch_size=opts["batch"], learning_rate=opts["lr"],
        lr_schedule=opts["lr_schedule"], epsilon=opts["eps"],
        target_update_period=opts["target_period"],
        buffer_capacity=opts["buffer_capacity"], num_envs=opts["num_envs"],
        min_buffer=opts["min_buffer"], residual_clip=clip,
        log_every=opts["log_every"], seed=opts["seed"],
    )
    result = trainer.train(scorer, pcfg, tcfg)
    policy.save_checkpoint(out / "checkpoint.npz", result.params, pcfg)
    with (out / "train_log.jsonl").open("w") as fh:
        for rec in result.records:
            fh.write(json.dumps(rec) + "\n")
    last = result.records[-1]["loss"] if result.records else None
    print(f"wrote {out / 'checkpoint.npz'} (final loss {last})")
    return EXIT_OK


def cmd_sample(opts: dict) -> int:
    from . import graph, policy, trainer

    ckpt = _require_file(opts, "checkpoint")
    out = _prepare_out(opts, "sample")
    params, pcfg = policy.load_checkpoint(ckpt)
    rng = np.random.default_rng(np.random.SeedSequence(opts["seed"]))
    samples = trainer.sample_posterior(params, pcfg, opts["n"], rng)
    with (out / "samples.jsonl").open("w") as fh:
        for s in samples:
            fh.write(json.dumps(graph.graph_to_json(s)) + "\n")
    print(f"wrote {out / 'samples.jsonl'} ({len(samples)} DAGs)")
    return EXIT_OK


def cmd_evaluate(opts: dict) -> int:
    from . import datagen, metrics, scores

    samples = _load_samples_jsonl(_require_file(opts, "samples"))
    gt = datagen.load_ground_truth(_require_file(opts, "ground_truth"))
    _, scorer = _load_training_inputs(opts)
    heldout = None
    if opts.get("heldout") is not None:
        kind = scores.CONTINUOUS if opts["score"] == "bge" else scores.DISCRETE
        heldout = scores.load_dataset_csv(_require_file(opts, "heldout"), kind,
                                          opts.get("heldout_mask"))
        if opts.get("standardize"):
            heldout = datagen.standardize(heldout)
    out = _prepare_out(opts, "evaluate")
    report = metrics.evaluate_samples(samples, gt.graph, scorer, heldout,
                                      num_bootstrap=opts["num_bootstrap"],
                                      seed=opts["seed"])
    metrics.save_report(report, out / "report.json")
    metrics.mec_summary_to_csv(report.mec_summary, out / "mec_summary.csv")
    print(f"E-SHD {report.expected_shd.mean:.3f}  AUROC {report.auroc:.3f}  "
          f"E-#edges {report.expected_num_edges.mean:.3f}")
    return EXIT_OK


def cmd_compare_exact(opts: dict) -> int:
    from . import exact, policy, trainer

    _, scorer = _load_training_inputs(opts)
    d = scorer.data.num_variables
    if d > exact.MAX_EXACT_NODES:
        raise CliConfigError(
            f"compare-exact enumerates every DAG and supports at most "
            f"{exact.MAX_EXACT_NODES} variables; this dataset has {d}")
    if (opts.get("checkpoint") is None) == (opts.get("samples") is None):
        raise CliConfigError("exactly one of --checkpoint or --samples is required")
    if opts.get("checkpoint") is not None:
        params, pcfg = policy.load_checkpoint(_require_file(opts, "checkpoint"))
        if pcfg.n_nodes != d:
            raise CliConfigError("checkpoint and dataset disagree on variable count")
        rng = np.random.default_rng(np.random.SeedSequence(opts["seed"]))
        samples = trainer.sample_posterior(params, pcfg, opts["n"], rng)
    else:
        samples = _load_samples_jsonl(_require_file(opts, "samples"))

    out = _prepare_out(opts, "compare-exact")
    table = exact.exact_posterior(scorer, d)
    correlations = {}
    for kind in exact.FEATURE_KINDS:
        ex = exact.exact_feature_marginals(table, kind)
        est = exact.estimate_feature_marginals(samples, kind)
        correlations[kind] = exact.feature_correlation(ex, est)
        exact.feature_matrix_to_csv(ex, out / f"exact_{kind}.csv")
        exact.feature_matrix_to_csv(est, out / f"approx_{kind}.csv")
    report = {"pearson_r": correlations, "num_samples": len(samples), "d": d}
    (out / "compare_exact.json").write_text(json.dumps(report, indent=2) + "\n")
    print("  ".join(f"r[{k}]={v:.4f}" for k, v in correlations.items()))
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "sample": cmd_sample,
    "evaluate": cmd_evaluate,
    "compare-exact": cmd_compare_exact,
}


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    explicit = vars(ns)
    command = explicit.pop("command")

    from .scores import ConfigError, ScoreDegeneracyError
    from .trainer import TrainingDivergedError

    try:
        opts = merge_options(command, explicit)
        limit = os.environ.get("DGF_THREADS")
        if limit:
            import threadpoolctl

            with threadpoolctl.threadpool_limits(limits=int(limit)):
                return COMMANDS[command](opts)
        return COMMANDS[command](opts)
    except (CliConfigError, ConfigError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingDivergedError, ScoreDegeneracyError, FloatingPointError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
