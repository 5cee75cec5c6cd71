"""End-to-end subcommand runs on a tiny rendered world, plus config-file
validation. Every invocation goes through main(argv) in process."""

import csv
import json
import os

import pytest

from trpose.cli import main
from trpose.configfile import (
    ConfigError,
    condition_from_config,
    load_config,
    model_from_config,
    run_plan_from_config,
)
from trpose.data import load_pairs
from trpose.model import load_checkpoint
from trpose.pose_graph import VO, PoseGraph

_SMOKE_CONFIG = """\
[world]
preset = loop_b
landmark_count = 25

[camera]
width = 8
height = 8

[traversal]
keyframe_spacing_mean = 1.2

[runs]
teach_condition = day_snow
repeats = day_snow:2 night_green:1
seed_base = 5

[model]
scale = tiny

[train]
batch_size = 8
max_epochs = 2
patience = 2
samples = 40
"""


@pytest.fixture(scope="module")
def smoke(tmp_path_factory):
    """One generated dataset shared by the subcommand tests."""
    root = tmp_path_factory.mktemp("cli_world")
    config = str(root / "smoke.ini")
    with open(config, "w") as fh:
        fh.write(_SMOKE_CONFIG)
    out = str(root / "data")
    assert main(["generate", "--config", config, "--out", out]) == 0
    return {"config": config, "out": out,
            "graph": os.path.join(out, "graph.txt")}


def test_generate_writes_dataset(smoke):
    out = smoke["out"]
    for name in ("graph.txt", "runs.csv", "images_manifest.tsv",
                 "run_manifest.json"):
        assert os.path.isfile(os.path.join(out, name)), name
    graph = PoseGraph.load(smoke["graph"])
    assert graph.runs() == [0, 1, 2, 3]
    total = sum(graph.run_length(r) for r in graph.runs())
    with open(os.path.join(out, "runs.csv")) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == total
    conditions = {int(r["run"]): r["condition"] for r in rows}
    assert conditions[0] == "day_snow" and conditions[3] == "night_green"
    kf = graph.keyframe(graph.sample_vo_pairs(1)[0].a)
    left, right = graph.resolve_image_paths(kf)
    assert os.path.isfile(left) and os.path.isfile(right)


def test_generate_is_reproducible(smoke, tmp_path):
    out2 = str(tmp_path / "data2")
    assert main(["generate", "--config", smoke["config"], "--out", out2]) == 0
    with open(smoke["graph"], "rb") as fh:
        first = fh.read()
    with open(os.path.join(out2, "graph.txt"), "rb") as fh:
        assert fh.read() == first
    sample_img = "images/run01/kf0003_L.png"
    with open(os.path.join(smoke["out"], sample_img), "rb") as fh:
        img_first = fh.read()
    with open(os.path.join(out2, sample_img), "rb") as fh:
        assert fh.read() == img_first


def test_generate_sweep_overrides_repeat_plan(smoke, tmp_path):
    out = str(tmp_path / "sweep")
    rc = main(["generate", "--config", smoke["config"], "--out", out,
               "--sweep", "day_green,night_snow", "--seed", "9"])
    assert rc == 0
    graph = PoseGraph.load(os.path.join(out, "graph.txt"))
    assert graph.runs() == [0, 1, 2]
    assert graph.keyframe(graph.sample_vo_pairs(1)[0].a).condition == "day_green"
    assert graph.keyframe(graph.sample_vo_pairs(2)[0].a).condition == "night_snow"


def test_sample_vo_pairs_capped_and_deterministic(smoke, tmp_path):
    out = str(tmp_path / "pairs")
    rc = main(["sample", "--graph", smoke["graph"], "--kind", "vo",
               "--n", "30", "--seed", "3", "--out", out])
    assert rc == 0
    pairs = load_pairs(os.path.join(out, "pairs_vo.txt"))
    assert len(pairs) == 30
    assert all(p.kind == VO for p in pairs)

    out2 = str(tmp_path / "pairs2")
    main(["sample", "--graph", smoke["graph"], "--kind", "vo",
          "--n", "30", "--seed", "3", "--out", out2])
    assert load_pairs(os.path.join(out2, "pairs_vo.txt")) == pairs

    out3 = str(tmp_path / "pairs3")
    main(["sample", "--graph", smoke["graph"], "--kind", "vo",
          "--n", "100000", "--out", out3])
    graph = PoseGraph.load(smoke["graph"])
    pool = sum(graph.run_length(r) - 1 for r in graph.runs())
    assert len(load_pairs(os.path.join(out3, "pairs_vo.txt"))) == pool


def test_sample_localization_pairs_with_hops_and_runs(smoke, tmp_path):
    out = str(tmp_path / "loc_pairs")
    rc = main(["sample", "--graph", smoke["graph"], "--kind", "loc",
               "--n", "60", "--seed", "4", "--hops", "1",
               "--runs", "1,2,3", "--out", out])
    assert rc == 0
    pairs = load_pairs(os.path.join(out, "pairs_localization.txt"))
    assert len(pairs) == 60
    assert {p.a.run for p in pairs} <= {1, 2, 3}
    assert {p.b.run for p in pairs} <= {1, 2, 3}


def test_train_and_resume(smoke, tmp_path):
    pairs_dir = str(tmp_path / "pairs")
    main(["sample", "--graph", smoke["graph"], "--kind", "vo",
          "--n", "40", "--seed", "1", "--out", pairs_dir])
    manifest = os.path.join(pairs_dir, "pairs_vo.txt")

    out = str(tmp_path / "train")
    rc = main(["train", "--config", smoke["config"], "--graph", smoke["graph"],
               "--manifest", manifest, "--out", out, "--seed", "2"])
    assert rc == 0
    ckpt = os.path.join(out, "checkpoint_vo.pt")
    report_csv = os.path.join(out, "train_report_vo.csv")
    assert os.path.isfile(ckpt) and os.path.isfile(report_csv)
    steps_first = int(load_checkpoint(ckpt).steps)
    assert steps_first > 0
    lines = open(report_csv).read().splitlines()
    assert lines[0] == "epoch,train_loss,val_loss,seconds"

    out2 = str(tmp_path / "resumed")
    rc = main(["train", "--config", smoke["config"], "--graph", smoke["graph"],
               "--manifest", manifest, "--out", out2, "--seed", "2",
               "--resume", ckpt])
    assert rc == 0
    resumed = load_checkpoint(os.path.join(out2, "checkpoint_vo.pt"))
    assert int(resumed.steps) > steps_first


def test_train_rejects_mixed_manifest(smoke, tmp_path, capsys):
    loc_dir = str(tmp_path / "loc")
    main(["sample", "--graph", smoke["graph"], "--kind", "loc",
          "--n", "10", "--out", loc_dir])
    vo_dir = str(tmp_path / "vo")
    main(["sample", "--graph", smoke["graph"], "--kind", "vo",
          "--n", "10", "--out", vo_dir])
    mixed = str(tmp_path / "mixed.txt")
    lines = open(os.path.join(vo_dir, "pairs_vo.txt")).read().splitlines()
    loc_lines = open(os.path.join(loc_dir, "pairs_localization.txt")).read().splitlines()
    with open(mixed, "w") as fh:
        fh.write("\n".join(lines + loc_lines[1:]) + "\n")
    rc = main(["train", "--config", smoke["config"], "--graph", smoke["graph"],
               "--manifest", mixed, "--out", str(tmp_path / "out")])
    assert rc == 2
    assert "mixes pair kinds" in capsys.readouterr().err


def test_evaluate_with_oracle_stub(smoke, tmp_path):
    out = str(tmp_path / "report")
    rc = main(["evaluate", "--graph", smoke["graph"], "--out", out,
               "--stub-oracle", "--runs", "1,2", "--follow-run", "2",
               "--window", "4", "--weights", "0.4,0.6"])
    assert rc == 0
    with open(os.path.join(out, "rmse_matrix.csv")) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4
    for row in rows:
        assert float(row["rmse_x_m"]) < 1e-9
        assert float(row["rmse_y_m"]) < 1e-9
        assert float(row["rmse_theta_deg"]) < 1e-9
    for name in ("rmse_matrix.png", "vo_tracks.png", "error_cdfs.png",
                 "fusion_run02.png", "vo_track_run01.csv",
                 "cdf_run01_vs_teach.csv", "fusion_run02_teach00.csv",
                 "run_manifest.json"):
        path = os.path.join(out, name)
        assert os.path.isfile(path), name
        assert os.path.getsize(path) > 0, name


def test_evaluate_needs_models_or_stub(smoke, tmp_path, capsys):
    rc = main(["evaluate", "--graph", smoke["graph"],
               "--out", str(tmp_path / "r")])
    assert rc == 2
    assert "--stub-oracle" in capsys.readouterr().err


def test_run_manifest_records_invocation(smoke):
    with open(os.path.join(smoke["out"], "run_manifest.json")) as fh:
        payload = json.load(fh)
    assert payload["command"] == "generate"
    assert payload["out"] == smoke["out"]
    assert payload["config"] == smoke["config"]


def test_usage_errors_exit_1(capsys):
    with pytest.raises(SystemExit) as info:
        main(["sample", "--graph", "g.txt", "--kind", "teleport", "--out", "x"])
    assert info.value.code == 1
    with pytest.raises(SystemExit) as info:
        main(["generate"])
    assert info.value.code == 1


def test_config_error_exits_1(smoke, tmp_path, capsys):
    bad = str(tmp_path / "bad.ini")
    with open(bad, "w") as fh:
        fh.write("[world]\npreset = loop_a\nwarp_speed = 9\n")
    rc = main(["generate", "--config", bad, "--out", str(tmp_path / "d")])
    assert rc == 1
    assert "config error" in capsys.readouterr().err


def test_missing_graph_is_runtime_error(tmp_path, capsys):
    rc = main(["sample", "--graph", str(tmp_path / "nope.txt"),
               "--kind", "vo", "--out", str(tmp_path / "o")])
    assert rc == 2


def test_load_config_validates_sections_and_keys(tmp_path):
    cfg = load_config()
    assert cfg["world"]["preset"] == "loop_a"
    bad = str(tmp_path / "bad.ini")
    with open(bad, "w") as fh:
        fh.write("[warp]\nspeed = 9\n")
    with pytest.raises(ConfigError, match=r"unknown config section \[warp\]"):
        load_config(bad)
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(str(tmp_path / "missing.ini"))


def test_model_config_must_match_camera():
    cfg = load_config()
    cfg["model"]["scale"] = "tiny"
    with pytest.raises(ConfigError, match="8x8 images"):
        model_from_config(cfg)
    cfg["model"]["scale"] = "hangar"
    with pytest.raises(ConfigError, match="unknown model scale"):
        model_from_config(cfg)


def test_run_plan_and_conditions():
    cfg = load_config()
    plan = run_plan_from_config(cfg)
    assert len(plan) == 5
    assert plan[0][0] == "day_snow"
    assert plan[0][1].lateral_sigma == 0.0  # the teach run drives cleanly
    assert plan[1][1].lateral_sigma == pytest.approx(0.03)
    seeds = [t.seed for _, t in plan]
    assert seeds == list(range(100, 105))

    swept = run_plan_from_config(cfg, seed_base=7, sweep=["night_snow"])
    assert [name for name, _ in swept] == ["day_snow", "night_snow"]
    assert [t.seed for _, t in swept] == [7, 8]

    cfg["runs"]["repeats"] = "day_snow:two"
    with pytest.raises(ConfigError, match="bad repeats token"):
        run_plan_from_config(cfg)

    with pytest.raises(ConfigError, match="unknown condition"):
        condition_from_config(load_config(), "dusk")


def test_custom_condition_section(tmp_path):
    path = str(tmp_path / "cond.ini")
    with open(path, "w") as fh:
        fh.write("[conditions.dusk]\nillumination = 0.4\nnoise_sigma = 0.03\n")
    cfg = load_config(path)
    cond = condition_from_config(cfg, "dusk")
    assert cond.illumination == pytest.approx(0.4)
    assert cond.noise_sigma == pytest.approx(0.03)
    assert cond.season == pytest.approx(0.5)  # untouched default
