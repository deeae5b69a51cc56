import json
import os
import subprocess
import sys
from pathlib import Path

import pytest

from expanse.cli import COMMANDS, ExperimentConfig, main, run, validate

GOLDEN = Path(__file__).parent / "golden"

TORUS_SCAN = {"command": "scan", "flow": {"family": "torus"},
              "measure": {"kind": "lebesgue-torus"}, "seed": 7, "N": 400, "step": 0.05,
              "q": 4, "eps_grid": [0.2], "t_grid": [0.0, 1.0, 2.0], "center_count": 3}

SUSP = {"flow": {"family": "suspension", "alphabet_size": 2},
        "measure": {"kind": "bernoulli-suspension", "p": [0.5, 0.5]}, "seed": 3}

SMOKE = {
    "ball-mass": {**SUSP, "N": 500, "eps_grid": [0.2, 0.3], "t_grid": [0.0, 1.0, 2.0]},
    "scan": {**SUSP, "N": 500, "eps_grid": [0.2], "t_grid": [0.0, 1.0, 2.0, 3.0],
             "center_count": 3},
    "entropy": {**SUSP, "N": 300, "eps_grid": [0.2], "n_grid": [0, 1, 2, 3]},
    "bk-curve": {**SUSP, "N": 500, "eps_grid": [0.2], "t_grid": [0.0, 1.0, 2.0],
                 "center_count": 2, "min_count": 1},
    "cover": {**SUSP, "N": 10, "eps_grid": [0.5], "delta": 0.03, "horizon": 2.0,
              "step": 0.01, "q": 40, "members": 12,
              "center": {"seed": 11, "roof": 0.3}},
    "regularize-demo": {"seed": 5, "alpha": 0.2, "count": 4, "horizon": 3.0},
    "tube-check": {**SUSP, "N": 5, "delta": 0.05, "horizon": 4.0},
}

OUTPUTS = {"ball-mass": ["ball_mass.csv"], "scan": ["scan.csv", "scan_summary.csv"],
           "entropy": ["entropy.csv", "entropy_summary.csv"],
           "bk-curve": ["bk_curve.csv", "bk_summary.csv"],
           "cover": ["cover.csv", "cover_members.csv"],
           "regularize-demo": ["regularize.csv", "regularize_summary.csv"],
           "tube-check": ["tube.csv"]}


def write_config(tmp_path, data, name="run.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


def csv_bytes(out):
    return {p.name: p.read_bytes() for p in sorted(Path(out).glob("*.csv"))}


# -------------------------------------------------------------- validation


def test_default_config_is_valid():
    assert validate(ExperimentConfig()) == []


def test_zero_samples_is_one_violation():
    probs = validate(ExperimentConfig(N=0))
    assert len(probs) == 1 and probs[0].field == "N" and probs[0].level == "error"


def test_radius_above_diameter_only_warns():
    cfg, _ = ExperimentConfig.from_dict({**TORUS_SCAN, "eps_grid": [0.2, 0.9], "alpha": 0.1})
    probs = validate(cfg)
    assert [(v.level, v.field) for v in probs] == [("warning", "eps_grid")]


@pytest.mark.parametrize("patch, name", [({"step": 0.0}, "step"), ({"q": 0}, "q"),
                                         ({"t_grid": []}, "t_grid"), ({"seed": None}, "seed"),
                                         ({"side": "both"}, "side"),
                                         ({"flow": {"family": "sphere"}}, "flow"),
                                         ({"measure": {"kind": "lebesgue-torus"}}, "measure")])
def test_violations_name_the_field(patch, name):
    cfg, _ = ExperimentConfig.from_dict({**SUSP, **patch})
    assert name in {v.field for v in validate(cfg) if v.level == "error"}


def test_unknown_keys_are_reported():
    _, unknown = ExperimentConfig.from_dict({"epsilon": 0.1})
    assert [v.field for v in unknown] == ["epsilon"]


# -------------------------------------------------------------------- main


def test_minimal_torus_scan(tmp_path):
    cfg = write_config(tmp_path, TORUS_SCAN)
    assert main(["scan", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    lines = (tmp_path / "o" / "scan_summary.csv").read_text().splitlines()
    assert lines[0] == "epsilon,rate,r2,verdict,floor"
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert manifest["exit_status"] == 0
    assert manifest["config"]["seed"] == 7
    assert {"numpy", "numba", "python"} <= set(manifest["versions"])
    assert manifest["wall_time_s"] >= 0


def test_alpha_at_least_one_exits_2(tmp_path, capsys):
    cfg = write_config(tmp_path, {**TORUS_SCAN, "alpha": 1.0})
    assert main(["scan", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "alpha" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_command_mismatch_exits_2(tmp_path, capsys):
    cfg = write_config(tmp_path, TORUS_SCAN)
    assert main(["entropy", "--config", cfg]) == 2
    assert "command" in capsys.readouterr().err


def test_unreadable_config_exits_2(tmp_path):
    assert main(["scan", "--config", str(tmp_path / "missing.json")]) == 2
    (tmp_path / "bad.json").write_text("{")
    assert main(["scan", "--config", str(tmp_path / "bad.json")]) == 2


@pytest.mark.parametrize("command", COMMANDS)
def test_every_command_writes_its_files(tmp_path, command):
    cfg = write_config(tmp_path, {"command": command, **SMOKE[command]})
    out = tmp_path / "o"
    assert main([command, "--config", cfg, "--out", str(out)]) == 0
    for name in OUTPUTS[command]:
        assert (out / name).read_text().count("\n") >= 2
    assert json.loads((out / "manifest.json").read_text())["outputs"] == OUTPUTS[command]


def test_cover_failure_exits_1(tmp_path, capsys, monkeypatch):
    # identity witnesses put a far-away point in the center's group
    import expanse.entropy as E
    from expanse.flows import BernoulliSymbols, SuspensionPoint
    from expanse.reparam import Warp

    def fake_members(flow, x, delta, t, eps, L, count, step, q, seed):
        far = SuspensionPoint(BernoulliSymbols(99, (0.5, 0.5)), 0, 0.8)
        return [x, far], [Warp.identity(t)] * 2

    monkeypatch.setattr(E, "ball_members", fake_members)
    cfg = write_config(tmp_path, {"command": "cover", **SMOKE["cover"]})
    assert main(["cover", "--config", cfg, "--out", str(tmp_path / "o")]) == 1
    assert "cover_failures.csv" in capsys.readouterr().err
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert manifest["failure"]["record"].endswith("cover_failures.csv")
    rows = (tmp_path / "o" / "cover_failures.csv").read_text().splitlines()
    assert rows[0] == "member,signature" and rows[1].startswith("1,")


def test_runtime_failure_is_reported(tmp_path):
    cfg, _ = ExperimentConfig.from_dict({**SUSP, "command": "ball-mass",
                                         "measure": {"kind": "custom", "points": []},
                                         "out": str(tmp_path / "o")})
    assert run(cfg) == 1
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert manifest["exit_status"] == 1 and manifest["failure"]["message"]


# ------------------------------------------------------------ determinism


def test_reruns_are_byte_identical(tmp_path):
    cfg = write_config(tmp_path, {"command": "scan", **SMOKE["scan"]})
    main(["scan", "--config", cfg, "--out", str(tmp_path / "a")])
    main(["scan", "--config", cfg, "--out", str(tmp_path / "b")])
    assert csv_bytes(tmp_path / "a") == csv_bytes(tmp_path / "b")


def test_scan_matches_golden_file(tmp_path):
    cfg = write_config(tmp_path, {"command": "scan", **SMOKE["scan"]})
    main(["scan", "--config", cfg, "--out", str(tmp_path / "o")])
    for name in ("scan.csv", "scan_summary.csv"):
        assert (tmp_path / "o" / name).read_bytes() == (GOLDEN / name).read_bytes()


def test_manifest_reexecutes(tmp_path):
    cfg = write_config(tmp_path, {"command": "bk-curve", **SMOKE["bk-curve"]})
    main(["bk-curve", "--config", cfg, "--out", str(tmp_path / "a")])
    manifest = str(tmp_path / "a" / "manifest.json")
    assert main(["bk-curve", "--config", manifest, "--out", str(tmp_path / "b")]) == 0
    assert csv_bytes(tmp_path / "a") == csv_bytes(tmp_path / "b")


def test_seed_override_changes_outputs(tmp_path):
    cfg = write_config(tmp_path, {"command": "scan", **SMOKE["scan"]})
    main(["scan", "--config", cfg, "--out", str(tmp_path / "a")])
    main(["scan", "--config", cfg, "--out", str(tmp_path / "b"), "--seed", "4"])
    assert csv_bytes(tmp_path / "a") != csv_bytes(tmp_path / "b")
    assert json.loads((tmp_path / "b" / "manifest.json").read_text())["config"]["seed"] == 4


def run_subprocess(cfg, out, threads):
    env = dict(os.environ)
    env.pop("NUMBA_NUM_THREADS", None)
    return subprocess.run([sys.executable, "-m", "expanse.cli", "scan", "--config", cfg,
                           "--out", str(out), "--threads", str(threads)],
                          env=env, capture_output=True, text=True, timeout=600)


@pytest.mark.slow
def test_thread_count_does_not_change_outputs(tmp_path):
    cfg = write_config(tmp_path, {"command": "scan", **SMOKE["scan"]})
    for threads in (1, 2):
        proc = run_subprocess(cfg, tmp_path / f"t{threads}", threads)
        assert proc.returncode == 0, proc.stderr
    assert csv_bytes(tmp_path / "t1") == csv_bytes(tmp_path / "t2")
    m = json.loads((tmp_path / "t2" / "manifest.json").read_text())
    assert m["threads"] == 2
