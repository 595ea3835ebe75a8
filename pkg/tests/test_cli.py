import filecmp

import numpy as np
import pytest

from egoradar import io
from egoradar.cli import main, parse_frames, UsageError

CONFIG = """seed: 5
radar: {preset: paper_sim}
scene: {preset: paper_drive, num_frames: 3}
image: {format: csv}
output: {dir: out}
"""


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text(CONFIG)
    return path


def same_tree(a, b):
    files_a = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    assert files_a == files_b and files_a
    return all(filecmp.cmp(a / f, b / f, shallow=False) for f in files_a)


def test_parse_frames():
    assert parse_frames(None, 3) == [0, 1, 2]
    assert parse_frames("1..2", 3) == [1, 2]
    assert parse_frames("2", 3) == [2]
    for bad in ("2..1", "a..b", "0..3", "-1..1"):
        with pytest.raises(UsageError):
            parse_frames(bad, 3)


def test_usage_errors_exit_1(config, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["pipeline"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 1
    assert main(["pipeline", "--config", str(config), "--frames", "2..1"]) == 1
    assert main(["pipeline", "--config", str(config), "--k-set", "x"]) in (1, 2)


def test_io_errors_exit_2(tmp_path):
    assert main(["pipeline", "--config", str(tmp_path / "missing.yaml")]) == 2
    bad = tmp_path / "bad.yaml"
    bad.write_text("radar: {preset: paper_sim, num_tx: zero}\nscene: {preset: paper_drive}\n")
    assert main(["pipeline", "--config", str(bad)]) == 2


def test_malformed_scene_leaves_no_output(config, tmp_path):
    scene = tmp_path / "scene.yaml"
    scene.write_text("num_frames: 2\nego: {initial_velocity: [0, 8, 0]}\ntargets:\n  - {position: [0, 100, 0]}\n")
    out = tmp_path / "cube.rbr"
    assert main(["simulate", "--config", str(config), "--scene", str(scene), "--out", str(out)]) == 2
    assert not any(tmp_path.glob("cube*"))
    scene.write_text("ego: {initial_velocity: [0, 8]}\n")
    assert main(["simulate", "--config", str(config), "--scene", str(scene), "--out", str(out)]) == 2
    assert not any(tmp_path.glob("cube*"))


def test_simulate_header_and_zero_target_scene(config, tmp_path):
    out = tmp_path / "c.rbr"
    assert main(["simulate", "--config", str(config), "--out", str(out)]) == 0
    assert io.read_cube_header(out) == (128, 255, 8, 8, 3)
    assert len(io.read_csv(out.with_suffix(".truth.csv"), io.TRUTH_COLUMNS)) == 3
    empty = tmp_path / "empty.yaml"
    empty.write_text("num_frames: 1\nego: {initial_velocity: [0, 8, 0]}\n")
    out = tmp_path / "e.rbr"
    assert main(["simulate", "--config", str(config), "--scene", str(empty), "--out", str(out)]) == 0
    assert not io.read_cube(out).any()


def test_pipeline_is_deterministic(config, tmp_path):
    assert main(["pipeline", "--config", str(config), "--out-dir", str(tmp_path / "a")]) == 0
    assert main(["pipeline", "--config", str(config), "--out-dir", str(tmp_path / "b"), "--workers", "2"]) == 0
    assert same_tree(tmp_path / "a", tmp_path / "b")
    metrics = io.read_csv(tmp_path / "a" / "metrics.csv", (
        "frame", "ok", "err_vx", "err_vy", "err_vz", "k", "sir_pre_dB", "sir_post_dB", "sir_improvement_dB"))
    assert metrics[:, 1].all()
    measured = metrics[~np.isnan(metrics[:, 8]), 8]  # nan: no mover-only range bin
    assert measured.size >= 1 and np.all(measured >= 20)


def test_subcommands_compose(config, tmp_path):
    cube = tmp_path / "c.rbr"
    assert main(["simulate", "--config", str(config), "--out", str(cube)]) == 0
    chained = tmp_path / "chained.yaml"
    chained.write_text(CONFIG + f"input: {{cube: {cube.name}}}\n")
    assert main(["pipeline", "--config", str(chained), "--out-dir", str(tmp_path / "x")]) == 0
    assert main(["pipeline", "--config", str(config), "--out-dir", str(tmp_path / "y")]) == 0
    assert same_tree(tmp_path / "x", tmp_path / "y")

    cloud, est = tmp_path / "pc.csv", tmp_path / "est.csv"
    assert main(["extract", "--config", str(config), "--cube", str(cube), "--out", str(cloud)]) == 0
    assert main(["ego", "--config", str(config), "--pointcloud", str(cloud), "--out", str(est)]) == 0
    assert filecmp.cmp(cloud, tmp_path / "y" / "pointcloud.csv", shallow=False)
    assert filecmp.cmp(est, tmp_path / "y" / "estimates.csv", shallow=False)
    assert main(["remove", "--config", str(config), "--cube", str(cube), "--estimates", str(est),
                 "--out-dir", str(tmp_path / "rm")]) == 0
    assert filecmp.cmp(tmp_path / "rm" / "frame_0001_range_profile.csv",
                       tmp_path / "y" / "profiles" / "frame_0001_range_profile.csv", shallow=False)


def test_k0_matches_resolver_below_v_max(config, tmp_path):
    assert main(["pipeline", "--config", str(config), "--out-dir", str(tmp_path / "a"), "--k-set=0"]) == 0
    assert main(["pipeline", "--config", str(config), "--out-dir", str(tmp_path / "b"), "--k-set=-1,0,1"]) == 0
    for name in ("estimates.csv", "metrics.csv"):
        assert filecmp.cmp(tmp_path / "a" / name, tmp_path / "b" / name, shallow=False)


def test_eval_tables(config, tmp_path):
    out = tmp_path / "t2.csv"
    assert main(["eval", "--config", str(config), "--table", "2", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "method,vx_rmse,vy_rmse,vz_rmse"
    assert [l.split(",")[0] for l in lines[1:]] == ["LSR", "ODR"]
    out = tmp_path / "t3.csv"
    assert main(["eval", "--config", str(config), "--table", "3", "--frames", "0..1", "--out", str(out)]) == 0
    assert [l.split(",")[0] for l in out.read_text().splitlines()[1:]] == ["LSR", "LSR (k=0)", "ODR"]


def test_eval_scores_files(config, tmp_path):
    assert main(["pipeline", "--config", str(config), "--out-dir", str(tmp_path / "p")]) == 0
    out = tmp_path / "score.csv"
    assert main(["eval", "--config", str(config), "--estimates", str(tmp_path / "p" / "estimates.csv"),
                 "--truth", str(tmp_path / "p" / "truth.csv"), "--out", str(out)]) == 0
    assert out.read_text().splitlines()[1].startswith("ODR,")
    empty = tmp_path / "empty.csv"
    io.write_csv(empty, io.ESTIMATE_COLUMNS, [])
    assert main(["eval", "--config", str(config), "--estimates", str(empty),
                 "--truth", str(tmp_path / "p" / "truth.csv"), "--out", str(out)]) != 0
    assert main(["eval", "--config", str(config), "--estimates", str(empty), "--out", str(out)]) == 1


def test_majority_failure_exits_3(tmp_path):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text("radar: {preset: paper_sim}\nscene:\n  num_frames: 2\n  ego: {initial_velocity: [0, 8, 0]}\n"
                   "  targets:\n    - {position: [0, 10, 0]}\n")
    assert main(["pipeline", "--config", str(cfg), "--out-dir", str(tmp_path / "o")]) == 3
