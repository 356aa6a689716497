import json

import pytest

from raincast import cli
from raincast.evalpost import ThresholdMap, read_metrics
from raincast.train import load_model, read_epoch_log

SYNTH = {"synth": {"t_in": 2, "t_out": 2, "target_coarse": 4, "upscale": 2}}
TRAIN = {"model": {"kind": "unet3d", "in_bands": 4, "in_frames": 2, "out_frames": 2, "start_filters": 2,
                   "depth": 2, "input_size": 4},
         "optim": {"lr": 3e-3, "batch_size": 4, "max_epochs": 2}}


def run(*argv):
    return cli.run_cli([str(a) for a in argv])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "synth.json").write_text(json.dumps(SYNTH))
    (root / "train.json").write_text(json.dumps(TRAIN))
    assert run("synth", "--config", root / "synth.json", "--regions", 3, "--grid", 16, "--slots", 30,
               "--seed", 3, "--out", root / "data") == 0
    assert run("train", "--data", root / "data", "--config", root / "train.json", "--out", root / "ta") == 0
    assert run("train", "--data", root / "data", "--config", root / "train.json", "--input-crop", 2,
               "--seed", 1, "--out", root / "tb") == 0
    for name in ("a", "b"):
        assert run("predict", "--data", root / "data", "--checkpoint", root / f"t{name}" / "checkpoint.nwck",
                   "--name", name, "--out", root / f"p{name}") == 0
    assert run("ensemble", "--members", root / "pa" / "a.index.json", root / "pb" / "b.index.json",
               "--out", root / "pe") == 0
    assert run("thropt", "--data", root / "data", "--pred", root / "pe" / "ensemble.index.json",
               "--out", root / "pe") == 0
    assert run("eval", "--data", root / "data", "--pred", root / "pe" / "ensemble.index.json",
               "--thresholds", root / "pe" / "thresholds.json", "--out", root / "ee") == 0
    assert run("permute", "--data", root / "data", "--checkpoint", root / "ta" / "checkpoint.nwck",
               "--out", root / "ta") == 0
    assert run("report", "--inputs", root / "ta", root / "pe", root / "ee", "--out", root / "rep") == 0
    return root


def test_synth_deterministic(tmp_path):
    args = ["synth", "--regions", 2, "--held-out", 0, "--grid", 16, "--slots", 20]
    assert run(*args, "--seed", 7, "--out", tmp_path / "a") == 0
    assert run(*args, "--seed", 7, "--out", tmp_path / "b") == 0
    assert run(*args, "--seed", 8, "--out", tmp_path / "c") == 0
    a = (tmp_path / "a" / "manifest.json").read_bytes()
    assert a == (tmp_path / "b" / "manifest.json").read_bytes()
    assert a != (tmp_path / "c" / "manifest.json").read_bytes()
    assert (tmp_path / "a/r0/0005.bands.nwf").read_bytes() == (tmp_path / "b/r0/0005.bands.nwf").read_bytes()


def test_usage_errors_exit_1(tmp_path, capsys):
    assert run("bogus") == 1
    assert run("eval", "--out", tmp_path) == 1
    assert run("synth", "--out", tmp_path, "--no-such-flag") == 1
    assert run("synth", "--out", tmp_path, "--threads", 0) == 1
    assert run() == 1
    assert "usage" in capsys.readouterr().err
    assert run("--help") == 0


def test_data_errors_exit_2(tmp_path, pipeline, capsys):
    assert run("train", "--data", tmp_path / "missing", "--out", tmp_path / "o") == 2
    bad = tmp_path / "bad.nwck"
    bad.write_bytes(b"NWCK garbage")
    assert run("predict", "--data", pipeline / "data", "--checkpoint", bad, "--out", tmp_path / "o") == 2
    assert run("eval", "--data", pipeline / "data", "--pred", tmp_path / "none.json", "--out", tmp_path) == 2
    assert "Error" in capsys.readouterr().err


def test_transfer_refuses_seen_regions(pipeline, tmp_path):
    ck = pipeline / "ta" / "checkpoint.nwck"
    assert run("predict", "--data", pipeline / "data", "--checkpoint", ck, "--transfer",
               "--regions", "r0", "--out", tmp_path) == 2
    assert run("predict", "--data", pipeline / "data", "--checkpoint", ck, "--transfer", "--out", tmp_path) == 0
    index = json.loads((tmp_path / "model.index.json").read_text())
    assert list(index["regions"]) == ["r2"]


def test_artifact_names(pipeline):
    assert (pipeline / "data" / "manifest.json").exists()
    for name in ("epochs.csv", "checkpoint.nwck", "last.nwck", "permutation.csv", "run.json"):
        assert (pipeline / "ta" / name).exists()
    assert sorted(p.name for p in (pipeline / "pa").glob("*.probs.nwf")) == ["r0.a.probs.nwf", "r1.a.probs.nwf"]
    assert (pipeline / "pe" / "thresholds.json").exists()
    assert (pipeline / "ee" / "series.csv").read_text().startswith("lead_time,tp,fp,fn,iou\n")
    assert isinstance(read_metrics(pipeline / "pe" / "thresholds.json"), ThresholdMap)


def test_run_json_records_resolved_config(pipeline):
    runs = json.loads((pipeline / "ta" / "run.json").read_text())
    assert set(runs) == {"train", "permute"}
    train = runs["train"]["config"]["train"]
    assert train["optim"]["weight_decay"] == 5e-6            # default filled in
    assert train["optim"]["early_stop_patience"] == 10
    assert train["model"]["upsample"] == 2
    assert set(runs["train"]["sub_seeds"]) == {"init", "shuffle", "dropout"}
    assert "created" in runs["permute"] and "permutation" in runs["permute"]["sub_seeds"]


def test_input_crop_changes_model(pipeline):
    cfg, _, _ = load_model(pipeline / "tb" / "checkpoint.nwck")
    assert (cfg.input_size, cfg.upsample) == (2, 4)
    cfg, _, _ = load_model(pipeline / "ta" / "checkpoint.nwck")
    assert (cfg.input_size, cfg.upsample) == (4, 2)


def test_commands_idempotent(pipeline, tmp_path):
    ck = pipeline / "ta" / "checkpoint.nwck"
    assert run("train", "--data", pipeline / "data", "--config", pipeline / "train.json", "--out", tmp_path / "t") == 0
    for name in ("epochs.csv", "checkpoint.nwck"):
        assert (tmp_path / "t" / name).read_bytes() == (pipeline / "ta" / name).read_bytes()
    assert run("predict", "--data", pipeline / "data", "--checkpoint", ck, "--name", "a", "--out", tmp_path / "p") == 0
    for f in ("r0.a.probs.nwf", "r1.a.probs.nwf"):
        assert (tmp_path / "p" / f).read_bytes() == (pipeline / "pa" / f).read_bytes()
    assert run("permute", "--data", pipeline / "data", "--checkpoint", ck, "--out", tmp_path / "t") == 0
    assert (tmp_path / "t" / "permutation.csv").read_bytes() == (pipeline / "ta" / "permutation.csv").read_bytes()
    assert run("eval", "--data", pipeline / "data", "--pred", pipeline / "pe" / "ensemble.index.json",
               "--thresholds", pipeline / "pe" / "thresholds.json", "--out", tmp_path / "e") == 0
    assert (tmp_path / "e" / "series.csv").read_bytes() == (pipeline / "ee" / "series.csv").read_bytes()


def test_ensemble_rejects_mismatched_members(pipeline, tmp_path):
    assert run("predict", "--data", pipeline / "data", "--checkpoint", pipeline / "ta" / "checkpoint.nwck",
               "--regions", "r0", "--name", "a", "--out", tmp_path) == 0
    assert run("ensemble", "--members", tmp_path / "a.index.json", pipeline / "pb" / "b.index.json",
               "--out", tmp_path / "e") == 2


def test_report_round_trips(pipeline):
    rep = cli.read_report(pipeline / "rep")
    series = read_metrics(pipeline / "ee" / "series.csv")
    rows = [r for r in rep["lead_time_series.csv"] if r["run"] == "ee"]
    assert [(r["lead_time"], r["tp"], r["fp"], r["fn"], r["iou"]) for r in rows] == \
        [(s.scope, s.tp, s.fp, s.fn, s.iou) for s in series]
    perm = read_metrics(pipeline / "ta" / "permutation.csv")
    assert [(r["band_label"], r["delta"]) for r in rep["band_importance.csv"]] == \
        [(b.band_label, b.delta) for b in perm.bands]
    tmap = read_metrics(pipeline / "pe" / "thresholds.json")
    curves = [(r["region"], r["threshold"], r["iou"]) for r in rep["threshold_curves.csv"]]
    assert curves == [(rid, t, v) for rid in tmap.thresholds for t, v in zip(tmap.grid, tmap.curves[rid])]
    log = read_epoch_log(pipeline / "ta" / "epochs.csv")
    assert [{k: v for k, v in r.items() if k != "run"} for r in rep["training_curves.csv"]] == log
    assert set(rep) == {"lead_time_series.csv", "region_iou.csv", "threshold_curves.csv",
                        "band_importance.csv", "training_curves.csv"}
