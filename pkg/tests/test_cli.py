import json

import numpy as np
import pytest

from sheafcast.cli import (EXIT_CONFIG, EXIT_MISMATCH, EXIT_MISSING, EXIT_OK,
                           main)
from sheafcast.config import default_config, validate_config
from sheafcast.errors import ConfigError
from sheafcast.neurosim import load_rates_csv


def _fast_config(seed=11, count=3):
    cfg = default_config(seed)
    cfg["simulate"].update({"n_nodes": 10, "small_world_k": 4, "count": count})
    cfg["simulate"]["lif"]["duration_ms"] = 1600.0
    cfg["prior"].update({"top_k": 2})
    cfg["model"].update({"stalk_dim": 8, "map_dim": 8, "rounds": 1,
                         "normalize": True, "field_width": 8})
    cfg["train"].update({"max_epochs": 2, "batch_size": 16, "stride": 40})
    return cfg


def _write_config(tmp_path, cfg, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg, indent=1))
    return path


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Run simulate -> prior -> train once; commands under test reuse it."""
    root = tmp_path_factory.mktemp("pipeline")
    cfg = _fast_config()
    cfg_path = _write_config(root, cfg)
    sim_dir = root / "sim"
    assert main(["simulate", "--config", str(cfg_path),
                 "--out", str(sim_dir)]) == EXIT_OK
    prior_dir = root / "prior"
    assert main(["prior", "--config", str(cfg_path), "--data", str(sim_dir),
                 "--out", str(prior_dir)]) == EXIT_OK
    train_dir = root / "train"
    assert main(["train", "--config", str(cfg_path), "--data", str(sim_dir),
                 "--prior", str(prior_dir / "prior.csv"),
                 "--out", str(train_dir)]) == EXIT_OK
    return {"root": root, "cfg": cfg, "cfg_path": cfg_path, "sim": sim_dir,
            "prior": prior_dir, "train": train_dir}


def test_simulate_outputs_and_rerun_reproducibility(pipeline, tmp_path):
    sim = pipeline["sim"]
    manifest = json.loads((sim / "dataset_manifest.json").read_text())
    assert len(manifest["instances"]) == 3
    seeds = [e["seed"] for e in manifest["instances"]]
    assert len(set(seeds)) == 3
    for entry in manifest["instances"]:
        assert (sim / f"{entry['pre']}_rates.csv").exists()
        assert (sim / f"{entry['post']}_rates.csv").exists()
        assert entry["perturbation"] is not None

    rerun = tmp_path / "sim2"
    assert main(["simulate", "--config", str(pipeline["cfg_path"]),
                 "--out", str(rerun)]) == EXIT_OK
    for name in ("dataset_manifest.json", "00000_pre_rates.csv",
                 "00001_post_meta.json", "manifest_simulate.json"):
        assert (rerun / name).read_bytes() == (sim / name).read_bytes()


def test_run_manifest_contents(pipeline):
    manifest = json.loads((pipeline["sim"] / "manifest_simulate.json").read_text())
    assert manifest["command"] == "simulate"
    assert manifest["seed"] == 11
    assert len(manifest["config_hash"]) == 64
    assert manifest["tool_version"]


def test_prior_respects_top_k(pipeline):
    lines = (pipeline["prior"] / "prior.csv").read_text().splitlines()
    assert lines[0] == "src,dst,score"
    indeg = {}
    for line in lines[1:]:
        _, dst, _ = line.split(",")
        indeg[dst] = indeg.get(dst, 0) + 1
    assert max(indeg.values()) <= 2


def test_train_wrote_checkpoint_and_log(pipeline):
    train_dir = pipeline["train"]
    assert (train_dir / "checkpoint.json").exists()
    assert (train_dir / "checkpoint.bin").exists()
    log = [json.loads(x) for x in (train_dir / "train_log.jsonl").read_text().splitlines()]
    assert len(log) == 2 and {"epoch", "train_loss", "val_loss", "lr"} == set(log[0])
    ckpt = json.loads((train_dir / "checkpoint.json").read_text())
    assert ckpt["trained_on_perturbed"] is False


def test_forecast_shapes_and_metrics_pipeline(pipeline, tmp_path):
    # build windows from one simulated record, forecast them, score them
    from sheafcast.data import make_windows, save_windows
    from sheafcast.neurosim import load_record

    record = load_record(pipeline["sim"], "00000_pre")
    windows = make_windows(record.rates, 30, 10, 40, source_id="00000_pre")
    win_dir = tmp_path / "windows"
    manifest = save_windows(win_dir, windows)

    fc_dir = tmp_path / "fc"
    assert main(["forecast", "--checkpoint", str(pipeline["train"] / "checkpoint"),
                 "--windows", str(manifest), "--out", str(fc_dir)]) == EXIT_OK
    fc_files = sorted((fc_dir / "forecasts").glob("*.csv"))
    assert len(fc_files) == len(windows)
    pred = load_rates_csv(fc_files[0])
    assert pred.shape == (10, 10)
    assert np.all(np.isfinite(pred))

    out = tmp_path / "metrics"
    assert main(["metrics", "--forecasts", str(fc_dir / "forecasts"),
                 "--targets", str(fc_dir / "targets"),
                 "--out", str(out)]) == EXIT_OK
    report = json.loads((out / "metric_report.json").read_text())
    assert report["n_windows"] == len(windows)
    assert np.isfinite(report["mse"]) and report["mse"] >= 0.0


def test_perturb_eval_emits_report(pipeline, tmp_path):
    out = tmp_path / "pe"
    code = main(["perturb-eval", "--config", str(pipeline["cfg_path"]),
                 "--checkpoint", str(pipeline["train"] / "checkpoint"),
                 "--data", str(pipeline["sim"]), "--out", str(out)])
    assert code == EXIT_OK
    report = json.loads((out / "perturb_report.json").read_text())
    assert report["n_windows"] >= 1
    assert all(np.isfinite(report[k]) for k in ("mse", "mae", "dtw"))


def test_perturb_eval_refuses_contaminated_checkpoint(pipeline, tmp_path):
    src = pipeline["train"]
    dirty_dir = tmp_path / "dirty"
    dirty_dir.mkdir()
    manifest = json.loads((src / "checkpoint.json").read_text())
    manifest["trained_on_perturbed"] = True
    (dirty_dir / "checkpoint.json").write_text(json.dumps(manifest, sort_keys=True))
    (dirty_dir / "checkpoint.bin").write_bytes((src / "checkpoint.bin").read_bytes())
    code = main(["perturb-eval", "--config", str(pipeline["cfg_path"]),
                 "--checkpoint", str(dirty_dir / "checkpoint"),
                 "--data", str(pipeline["sim"]), "--out", str(tmp_path / "x")])
    assert code == EXIT_MISMATCH


def test_schema_violations_exit_2(tmp_path):
    bad = {"seed": 1, "simulate": {"banana": 3}}
    path = _write_config(tmp_path, bad)
    assert main(["simulate", "--config", str(path),
                 "--out", str(tmp_path / "o")]) == EXIT_CONFIG

    missing_seed = {"simulate": {}}
    path2 = _write_config(tmp_path, missing_seed, "c2.json")
    assert main(["simulate", "--config", str(path2),
                 "--out", str(tmp_path / "o2")]) == EXIT_CONFIG


def test_missing_inputs_exit_3(tmp_path):
    cfg_path = _write_config(tmp_path, _fast_config())
    assert main(["prior", "--config", str(cfg_path),
                 "--data", str(tmp_path / "nowhere"),
                 "--out", str(tmp_path / "o")]) == EXIT_MISSING
    assert main(["forecast", "--checkpoint", str(tmp_path / "nope"),
                 "--windows", str(tmp_path / "w.json"),
                 "--out", str(tmp_path / "o2")]) == EXIT_MISSING


def test_validate_config_fills_defaults_and_rejects_unknown():
    cfg = validate_config({"seed": 5})
    assert cfg["train"]["scheduler"]["factor"] == 0.5
    assert cfg["simulate"]["lif"]["membrane_tau"] == 10.0
    with pytest.raises(ConfigError):
        validate_config({"seed": 5, "extra_section": {}})
    with pytest.raises(ConfigError):
        validate_config({"seed": "five"})
    with pytest.raises(ConfigError):
        validate_config({"seed": 5, "train": {"lr": "fast"}})
