import json
import subprocess
import sys

import pytest

from trocarplan import cli

SMALL = {
    "schema_version": 1,
    "n_joint_nodes": 120,
    "n_position_nodes": 120,
    "n_scene_samples": 600,
    "grid": [16, 16],
    "seeds": [0],
}


def write_config(directory, **overrides):
    data = dict(SMALL)
    data.update(overrides)
    path = directory / "run.json"
    path.write_text(json.dumps(data))
    return str(path)


@pytest.fixture(scope="module")
def map_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("map")
    code = cli.main(["map", "--config", write_config(root),
                     "--out", str(root / "out")])
    return code, root / "out"


@pytest.fixture(scope="module")
def joint_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("plan_joint")
    code = cli.main(["plan", "--space", "joint",
                     "--config", write_config(root),
                     "--out", str(root / "out")])
    return code, root / "out"


@pytest.fixture(scope="module")
def position_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("plan_position")
    code = cli.main(["plan", "--space", "position",
                     "--config", write_config(root),
                     "--out", str(root / "out")])
    return code, root / "out"


@pytest.fixture(scope="module")
def compare_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("compare")
    code = cli.main(["compare", "--config", write_config(root),
                     "--out", str(root / "out")])
    return code, root / "out"


# -- map ----------------------------------------------------------------------

def test_map_exit_code(map_run):
    assert map_run[0] == 0


def test_map_vertex_count_matches_grid(map_run):
    _, out = map_run
    sidecar = json.loads((out / "boundary_mesh.json").read_text())
    obj_vertices = sum(1 for line in (out / "boundary_mesh.obj").read_text()
                       .splitlines() if line.startswith("v "))
    assert obj_vertices == sidecar["vertex_count"]
    # theta rows x phi columns, with the straight-down pole row collapsed
    n_theta, n_phi = SMALL["grid"]
    rays = (n_theta - 1) * n_phi + 1
    assert sidecar["vertex_count"] + len(sidecar["skipped"]) == rays


def test_map_sidecar_has_curvature(map_run):
    _, out = map_run
    sidecar = json.loads((out / "boundary_mesh.json").read_text())
    assert len(sidecar["curvature"]) == sidecar["vertex_count"]
    assert {"gaussian", "mean", "nonconcave"} <= set(sidecar["curvature"][0])


def test_map_cholecystectomy_scene(tmp_path):
    config = write_config(tmp_path, scene="cholecystectomy")
    out = tmp_path / "out"
    assert cli.main(["map", "--config", config, "--out", str(out)]) == 0
    sidecar = json.loads((out / "boundary_mesh.json").read_text())
    assert sidecar["vertex_count"] >= 5
    assert (out / "boundary_mesh.obj").exists()


def test_malformed_config_exits_2_without_partial_files(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{this is not json")
    out = tmp_path / "out"
    assert cli.main(["map", "--config", str(bad), "--out", str(out)]) == 2
    assert not out.exists()


def test_unknown_config_field_exits_2(tmp_path):
    config = tmp_path / "typo.json"
    config.write_text(json.dumps({"schema_version": 1, "sigmax_mm": 5.0}))
    out = tmp_path / "out"
    assert cli.main(["map", "--config", str(config),
                     "--out", str(out)]) == 2
    assert not out.exists()


# -- plan ----------------------------------------------------------------------

def test_plan_joint_artifacts(joint_run):
    code, out = joint_run
    assert code == 0
    lines = (out / "trajectory_joint.csv").read_text().splitlines()
    assert lines[0] == "t,q1_deg,q2_deg,q3_deg,q4_deg,q5_deg,x_mm,y_mm,z_mm"
    assert len(lines) == 201
    metrics = json.loads((out / "metrics_joint.json").read_text())
    assert metrics["planner"] == "joint"
    assert metrics["path_length_mm"] > 0.0
    assert metrics["sigma_q_calibrated"] is True
    assert metrics["sigma_q_deg"] > 0.0


def test_plan_position_artifacts(position_run):
    code, out = position_run
    assert code == 0
    lines = (out / "trajectory_position.csv").read_text().splitlines()
    assert len(lines) == 201
    # joint columns stay empty in position space
    assert lines[1].split(",")[1:6] == ["", "", "", "", ""]
    metrics = json.loads((out / "metrics_position.json").read_text())
    assert metrics["planner"] == "position"
    assert "sigma_q_deg" not in metrics


def test_plan_renders_figures(joint_run, position_run):
    for (_, out), names in (
            (joint_run, ("trajectory_joint.png", "angle_profile_joint.png",
                         "joint_profile.png")),
            (position_run, ("trajectory_position.png",
                            "angle_profile_position.png"))):
        for name in names:
            png = out / "figures" / name
            assert png.exists()
            assert png.read_bytes()[:4] == b"\x89PNG"


def test_plan_no_figures_flag(tmp_path):
    config = write_config(tmp_path)
    out = tmp_path / "out"
    code = cli.main(["plan", "--space", "position", "--config", config,
                     "--out", str(out), "--no-figures"])
    assert code == 0
    assert not (out / "figures").exists()


def test_plan_seed_determinism(tmp_path):
    config = write_config(tmp_path)
    runs = []
    for name in ("first", "second"):
        out = tmp_path / name
        assert cli.main(["plan", "--space", "position", "--config", config,
                         "--seed", "3", "--out", str(out),
                         "--no-figures"]) == 0
        runs.append((out / "trajectory_position.csv").read_bytes())
    assert runs[0] == runs[1]


def test_plan_start_equals_goal(tmp_path):
    point = [700.0, 0.0, -350.0]
    config = write_config(tmp_path, start_mm=point, goal_mm=point)
    out = tmp_path / "out"
    code = cli.main(["plan", "--space", "joint", "--config", config,
                     "--out", str(out), "--no-figures"])
    assert code == 0
    lines = (out / "trajectory_joint.csv").read_text().splitlines()
    assert len(lines) == 2
    metrics = json.loads((out / "metrics_joint.json").read_text())
    assert metrics["path_length_mm"] == 0.0
    assert metrics["dpsi_max_deg_per_mm"] == 0.0


def test_plan_unreachable_exits_4(tmp_path):
    config = write_config(tmp_path, start_mm=[750.0, 0.0, -1500.0])
    for space in ("joint", "position"):
        out = tmp_path / space
        code = cli.main(["plan", "--space", space, "--config", config,
                         "--out", str(out), "--no-figures"])
        assert code == 4
        assert not (out / f"trajectory_{space}.csv").exists()


def test_plan_requires_space_flag():
    with pytest.raises(SystemExit) as info:
        cli.main(["plan"])
    assert info.value.code == 2


# -- compare --------------------------------------------------------------------

def test_compare_artifacts(compare_run):
    code, out = compare_run
    assert code == 0
    payload = json.loads((out / "comparison.json").read_text())
    assert len(payload["runs"]) == 2
    assert payload["summary"]["joint"]["psi_ave_deg"]["mean"] > 0.0
    assert payload["sigma_q_deg"] > 0.0
    table = (out / "comparison.txt").read_text()
    assert "joint (proposed)" in table
    assert "position baseline" in table
    assert "calibrated" in table
    assert (out / "traces" / "trace_joint_seed0.csv").exists()
    assert (out / "traces" / "trace_position_seed0.csv").exists()


def test_compare_figures(compare_run):
    _, out = compare_run
    for name in ("comparison_metrics.png", "angle_profiles.png"):
        assert (out / "figures" / name).read_bytes()[:4] == b"\x89PNG"


def test_compare_uses_configured_sigma(tmp_path):
    config = write_config(tmp_path, sigma_q_deg=0.8)
    out = tmp_path / "out"
    assert cli.main(["compare", "--config", config, "--out", str(out),
                     "--no-figures"]) == 0
    assert "configured" in (out / "comparison.txt").read_text()
    payload = json.loads((out / "comparison.json").read_text())
    assert abs(payload["sigma_q_deg"] - 0.8) < 1e-12


def test_compare_all_failures_exits_4(tmp_path):
    config = write_config(tmp_path, start_mm=[750.0, 0.0, -1500.0])
    out = tmp_path / "out"
    code = cli.main(["compare", "--config", config, "--out", str(out),
                     "--no-figures"])
    assert code == 4
    payload = json.loads((out / "comparison.json").read_text())
    assert all(row["error"] for row in payload["runs"])


# -- calibrate --------------------------------------------------------------------

def test_calibrate_artifacts(tmp_path):
    config = write_config(tmp_path)
    out = tmp_path / "out"
    assert cli.main(["calibrate", "--config", config,
                     "--out", str(out)]) == 0
    payload = json.loads((out / "calibration.json").read_text())
    assert payload["sigma_q_deg"] > 0.0
    assert payload["sigma_q_rad"] == pytest.approx(
        payload["sigma_q_deg"] * 3.141592653589793 / 180.0)
    assert payload["triangles_used"] > 0
    assert payload["per_triangle_deg"]["min"] <= \
        payload["per_triangle_deg"]["mean"] <= \
        payload["per_triangle_deg"]["max"]


# -- flags and process behavior ----------------------------------------------------

def test_negative_seed_flag_exits_2(tmp_path):
    config = write_config(tmp_path)
    assert cli.main(["calibrate", "--config", config, "--seed", "-1",
                     "--out", str(tmp_path / "out")]) == 2


def test_missing_command_exits_2():
    with pytest.raises(SystemExit) as info:
        cli.main([])
    assert info.value.code == 2


def test_module_entry_point(tmp_path):
    config = write_config(tmp_path)
    out = tmp_path / "out"
    proc = subprocess.run(
        [sys.executable, "-m", "trocarplan", "map", "--config", config,
         "--out", str(out)],
        capture_output=True, text=True)
    assert proc.returncode == 0
    assert "vertices" in proc.stdout
    assert (out / "boundary_mesh.obj").exists()
