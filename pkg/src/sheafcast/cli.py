"""Command-line pipeline: simulate, prior, train, forecast, perturb-eval, metrics.

Each command is a thin binding of the corresponding library operation. Every
run writes a manifest capturing the config hash, input file hashes, seed,
and tool version; identical manifests reproduce identical outputs.

Exit codes: 0 success, 2 configuration/schema violation, 3 missing input,
4 checkpoint/config mismatch (including the perturbation leakage guard),
5 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .config import config_hash, default_config, file_hash, load_config
from .data import load_windows, make_perturbed_windows, make_windows
from .errors import (CheckpointMismatchError, ConfigError, DivergenceError,
                     InfeasiblePlacementError, InvalidParameterError,
                     NonFiniteStateError, SheafcastError)
from .graphs import (generate_small_world, granger_score_matrix, load_prior_csv,
                     prior_from_scores, save_prior_csv)
from .metrics import evaluate
from .model import ModelConfig
from .neurosim import (LifParams, PerturbationSpec, load_record, load_rates_csv,
                       sample_perturbation, save_rates_csv, save_record, simulate)
from .training import (TrainingConfig, forecast_windows, load_checkpoint,
                       save_checkpoint, train)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_MISMATCH = 4
EXIT_RUNTIME = 5


def _write_manifest(out_dir: Path, command: str, cfg, inputs: dict,
                    outputs: list, seed) -> None:
    manifest = {
        "command": command,
        "tool_version": __version__,
        "seed": seed,
        "config_hash": config_hash(cfg) if cfg is not None else None,
        "input_hashes": {str(k): file_hash(v) for k, v in inputs.items()},
        "outputs": sorted(outputs),
    }
    (out_dir / f"manifest_{command}.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=1) + "\n")


def _require(path, kind: str) -> Path:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{kind} not found: {path}")
    return path


def _load_cfg(args):
    if args.config:
        cfg = load_config(_require(args.config, "config"))
    elif args.seed is not None:
        cfg = default_config(args.seed)
    else:
        raise ConfigError("provide --config or --seed")
    if args.seed is not None:
        cfg["seed"] = args.seed
    return cfg


def _train_config(cfg) -> TrainingConfig:
    t = cfg["train"]
    return TrainingConfig(
        lambda1=t["lambda1"], lambda2=t["lambda2"], lr=t["lr"],
        weight_decay=t["weight_decay"], scheduler=dict(t["scheduler"]),
        max_epochs=t["max_epochs"], batch_size=t["batch_size"],
        folds=t["folds"], seed=cfg["seed"], ablation=t["ablation"],
        val_fraction=t["val_fraction"])


def _model_config(cfg) -> ModelConfig:
    m = cfg["model"]
    return ModelConfig(stalk_dim=m["stalk_dim"], map_dim=m["map_dim"],
                       rounds=m["rounds"], normalize=m["normalize"],
                       field_width=m["field_width"],
                       field_state_free=m["field_state_free"], dt=m["dt"],
                       ablation=cfg["train"]["ablation"])


# ----------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------
def cmd_simulate(args) -> int:
    cfg = _load_cfg(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    sim = cfg["simulate"]
    lif = LifParams(**sim["lif"])

    def run_instance(i: int):
        seed_i = cfg["seed"] + i
        graph = generate_small_world(sim["n_nodes"], sim["small_world_k"],
                                     sim["small_world_beta"], seed=seed_i)
        stem_pre = f"{i:05d}_pre"
        pre = simulate(graph, lif, seed_i, bin_ms=sim["bin_ms"],
                       sigma_ms=sim["sigma_ms"])
        written = list(save_record(out_dir, stem_pre, pre).values())
        entry = {"index": i, "seed": seed_i, "pre": stem_pre, "post": None,
                 "perturbation": None}
        if sim["perturb"]:
            spec = sample_perturbation(lif.duration_ms, seed_i,
                                       n_nodes=sim["n_nodes"])
            stem_post = f"{i:05d}_post"
            post = simulate(graph, lif, seed_i, perturbation=spec,
                            bin_ms=sim["bin_ms"], sigma_ms=sim["sigma_ms"])
            written += list(save_record(out_dir, stem_post, post).values())
            entry["post"] = stem_post
            entry["perturbation"] = {"neuron": spec.neuron,
                                     "onset_ms": spec.onset_ms,
                                     "duration_ms": spec.duration_ms}
        return entry, written

    indices = range(sim["count"])
    if args.threads > 1:
        # independent seeds; per-instance files, order restored by map
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            results = list(pool.map(run_instance, indices))
    else:
        results = [run_instance(i) for i in indices]
    instances = [entry for entry, _ in results]
    outputs = [name for _, written in results for name in written]
    dataset = {"instances": instances, "n_nodes": sim["n_nodes"],
               "bin_ms": sim["bin_ms"], "config": cfg}
    ds_path = out_dir / "dataset_manifest.json"
    ds_path.write_text(json.dumps(dataset, sort_keys=True, indent=1) + "\n")
    outputs.append(ds_path.name)
    _write_manifest(out_dir, "simulate", cfg, {}, outputs, cfg["seed"])
    print(f"simulate: wrote {len(instances)} record pair(s) to {out_dir}")
    return EXIT_OK


def _load_dataset(data_dir: Path) -> dict:
    return json.loads(_require(Path(data_dir) / "dataset_manifest.json",
                               "dataset manifest").read_text())


def cmd_prior(args) -> int:
    cfg = _load_cfg(args)
    data_dir = Path(args.data)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset = _load_dataset(data_dir)
    t = cfg["train"]
    score_sum = None
    n_windows = 0
    for entry in dataset["instances"]:
        record = load_record(data_dir, entry["pre"])
        for window in make_windows(record.rates, t["t_ctx"], t["t_hor"],
                                   t["stride"]):
            scores = granger_score_matrix(window.context,
                                          cfg["prior"]["lag_order"],
                                          cfg["prior"]["ridge"],
                                          n_jobs=args.threads)
            score_sum = scores if score_sum is None else score_sum + scores
            n_windows += 1
    if n_windows == 0:
        raise InvalidParameterError("dataset produced no context windows")
    prior = prior_from_scores(score_sum / n_windows,
                              lag_order=cfg["prior"]["lag_order"],
                              top_k=cfg["prior"]["top_k"])
    prior_path = out_dir / "prior.csv"
    save_prior_csv(prior_path, prior)
    _write_manifest(out_dir, "prior", cfg,
                    {"dataset": data_dir / "dataset_manifest.json"},
                    [prior_path.name], cfg["seed"])
    print(f"prior: {prior.n_edges} edges from {n_windows} context windows")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    data_dir = Path(args.data)
    prior_path = _require(args.prior, "prior CSV")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset = _load_dataset(data_dir)
    t = cfg["train"]
    windows = []
    for entry in dataset["instances"]:
        record = load_record(data_dir, entry["pre"])
        windows += make_windows(record.rates, t["t_ctx"], t["t_hor"],
                                t["stride"], time_step=dataset["bin_ms"],
                                source_id=entry["pre"])
    prior = load_prior_csv(prior_path, cfg["prior"]["lag_order"],
                           cfg["prior"]["top_k"], n_nodes=dataset["n_nodes"])
    ckpt = train(windows, prior, _train_config(cfg),
                 model_config=_model_config(cfg),
                 log_path=out_dir / "train_log.jsonl")
    ckpt_path = save_checkpoint(ckpt, out_dir / "checkpoint")
    _write_manifest(out_dir, "train", cfg,
                    {"dataset": data_dir / "dataset_manifest.json",
                     "prior": prior_path},
                    [ckpt_path.name, "checkpoint.bin", "train_log.jsonl"],
                    cfg["seed"])
    print(f"train: best val loss {ckpt.val_loss:.6f} at epoch {ckpt.epoch}")
    return EXIT_OK


def cmd_forecast(args) -> int:
    ckpt_prefix = Path(args.checkpoint)
    _require(ckpt_prefix.with_suffix(".json"), "checkpoint")
    ckpt = load_checkpoint(ckpt_prefix)
    model = ckpt.build_model()
    manifest_path = _require(args.windows, "windows manifest")
    windows = load_windows(manifest_path)
    out_dir = Path(args.out)
    fc_dir = out_dir / "forecasts"
    tg_dir = out_dir / "targets"
    fc_dir.mkdir(parents=True, exist_ok=True)
    tg_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    for i, window in enumerate(windows):
        pred = model.predict(window.context, window.horizon.shape[1])
        stem = f"{i:05d}"
        save_rates_csv(fc_dir / f"{stem}.csv", pred)
        save_rates_csv(tg_dir / f"{stem}.csv", window.horizon)
        meta = {"window": window.source_id, "denormalized": False,
                "n_nodes": window.n_nodes, "t_hor": window.horizon.shape[1]}
        (fc_dir / f"{stem}.json").write_text(
            json.dumps(meta, sort_keys=True, indent=1) + "\n")
        outputs += [f"forecasts/{stem}.csv", f"targets/{stem}.csv"]
    _write_manifest(out_dir, "forecast", None,
                    {"checkpoint": ckpt_prefix.with_suffix(".json"),
                     "windows": manifest_path},
                    outputs, None)
    print(f"forecast: wrote {len(windows)} window forecast(s)")
    return EXIT_OK


def cmd_perturb_eval(args) -> int:
    cfg = _load_cfg(args)
    ckpt_prefix = Path(args.checkpoint)
    _require(ckpt_prefix.with_suffix(".json"), "checkpoint")
    ckpt = load_checkpoint(ckpt_prefix)
    if ckpt.trained_on_perturbed:
        raise CheckpointMismatchError(
            "checkpoint was trained on perturbed sources; refusing to score "
            "the out-of-distribution protocol with a contaminated model")
    model = ckpt.build_model()
    data_dir = Path(args.data)
    dataset = _load_dataset(data_dir)
    ev = cfg["eval"]
    eval_windows = []
    skipped = 0
    for entry in dataset["instances"]:
        if not entry["post"]:
            continue
        pre = load_record(data_dir, entry["pre"])
        post = load_record(data_dir, entry["post"])
        spec = PerturbationSpec(**entry["perturbation"])
        try:
            eval_windows += make_perturbed_windows(pre, post, spec,
                                                   t_ctx=ev["t_ctx"],
                                                   t_hor=ev["t_hor"],
                                                   source_id=entry["post"])
        except InfeasiblePlacementError:
            skipped += 1        # onset too close to the series boundary
    if not eval_windows:
        raise InvalidParameterError("dataset contains no scoreable perturbed records")
    if skipped:
        print(f"perturb-eval: skipped {skipped} record(s) with infeasible "
              f"window placement", file=sys.stderr)
    preds, targets = forecast_windows(model, eval_windows)
    report = evaluate(preds, targets)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "perturb_report.json").write_text(
        json.dumps(report.to_dict(), sort_keys=True, indent=1) + "\n")
    _write_manifest(out_dir, "perturb-eval", cfg,
                    {"checkpoint": ckpt_prefix.with_suffix(".json"),
                     "dataset": data_dir / "dataset_manifest.json"},
                    ["perturb_report.json"], cfg["seed"])
    print(f"perturb-eval: mse={report.mse:.6f} mae={report.mae:.6f} "
          f"dtw={report.dtw:.6f} over {report.n_windows} window(s)")
    return EXIT_OK


def cmd_metrics(args) -> int:
    fc_dir = _require(args.forecasts, "forecast directory")
    tg_dir = _require(args.targets, "target directory")
    fc_files = sorted(Path(fc_dir).glob("*.csv"))
    tg_files = sorted(Path(tg_dir).glob("*.csv"))
    if not fc_files:
        raise FileNotFoundError(f"no forecast CSVs under {fc_dir}")
    if len(fc_files) != len(tg_files):
        raise InvalidParameterError(
            f"{len(fc_files)} forecasts vs {len(tg_files)} targets")
    preds = [load_rates_csv(p) for p in fc_files]
    targets = [load_rates_csv(p) for p in tg_files]
    report = evaluate(preds, targets)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "metric_report.json").write_text(
        json.dumps(report.to_dict(), sort_keys=True, indent=1) + "\n")
    _write_manifest(out_dir, "metrics", None,
                    {f.name: f for f in fc_files[:8]},
                    ["metric_report.json"], None)
    print(f"metrics: mse={report.mse:.6f} mae={report.mae:.6f} "
          f"dtw={report.dtw:.6f} over {report.n_windows} window(s)")
    return EXIT_OK


# ----------------------------------------------------------------------
# argument parsing
# ----------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sheafcast",
        description="Sheaf message passing + neural ODE forecasting pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", help="run configuration JSON")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", required=out_required, help="output directory")
        p.add_argument("--threads", type=int, default=1,
                       help="worker threads where the operation parallelizes")

    p = sub.add_parser("simulate", help="generate spiking-network records")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("prior", help="estimate the Granger prior graph")
    common(p)
    p.add_argument("--data", required=True, help="simulate output directory")
    p.set_defaults(func=cmd_prior)

    p = sub.add_parser("train", help="train the forecaster")
    common(p)
    p.add_argument("--data", required=True, help="simulate output directory")
    p.add_argument("--prior", required=True, help="prior CSV path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("forecast", help="forecast saved windows")
    common(p)
    p.add_argument("--checkpoint", required=True, help="checkpoint prefix")
    p.add_argument("--windows", required=True, help="windows manifest JSON")
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("perturb-eval",
                       help="score a clean checkpoint on perturbed windows")
    common(p)
    p.add_argument("--checkpoint", required=True, help="checkpoint prefix")
    p.add_argument("--data", required=True, help="simulate output directory")
    p.set_defaults(func=cmd_perturb_eval)

    p = sub.add_parser("metrics", help="score forecast CSVs against targets")
    common(p)
    p.add_argument("--forecasts", required=True)
    p.add_argument("--targets", required=True)
    p.set_defaults(func=cmd_metrics)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except CheckpointMismatchError as exc:
        print(f"checkpoint mismatch: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except (DivergenceError, NonFiniteStateError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except SheafcastError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
