import csv
import filecmp
from dataclasses import replace

import numpy as np
import pytest

from tinydrone.link import LinkConfig
from tinydrone.mission.runner import (
    ONBOARD_LATENCY_S,
    SUMMARY_HEADER,
    TIMELINE_HEADER,
    ConfigError,
    InferenceMode,
    MissionConfig,
    config_from_mapping,
    export_batch,
    export_report,
    load_config,
    parse_config_text,
    reseed,
    run_batch,
    run_mission,
)
from tinydrone.mission.scene import SceneSpec
from tinydrone.sim import PayloadConfig


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.fixture(scope="module")
def patrol3(int8_model):
    cfg = MissionConfig(scene=SceneSpec.random(3, seed=1), seed=1)
    return cfg, run_mission(cfg, int8_model)


def test_pure_hover_mission_lasts_380s():
    rep = run_mission(MissionConfig(dt=0.05))
    assert rep.outcome == "depleted"
    assert abs(rep.flight_time - 380) <= 1
    assert rep.decisions == 0 and rep.accuracy == 0.0


def test_three_target_mission(patrol3):
    _, rep = patrol3
    assert rep.outcome == "success"
    assert rep.decisions + rep.skipped >= 3
    assert rep.accuracy == rep.correct / rep.decisions
    for r in rep.results:
        assert r.t_decision - r.t_start == pytest.approx(ONBOARD_LATENCY_S[PayloadConfig.OPENMV])
    events = [row.event for row in rep.timeline]
    assert events[0] == "start" and "takeoff" in events and "land" in events
    assert events[-1] == "end outcome=success"
    used = [row.energy_j for row in rep.timeline]
    assert all(a <= b for a, b in zip(used, used[1:]))


def test_mission_deterministic(patrol3, int8_model, tmp_path):
    cfg, rep = patrol3
    again = run_mission(cfg, int8_model)
    assert again == rep
    a = export_report(rep, tmp_path / "a")
    b = export_report(again, tmp_path / "b")
    for key in a:
        assert filecmp.cmp(a[key], b[key], shallow=False)


def test_export_formats(patrol3, tmp_path):
    _, rep = patrol3
    paths = export_report(rep, tmp_path)
    summary = read_csv(paths["summary"])
    assert summary[0] == SUMMARY_HEADER
    row = dict(zip(summary[0], summary[1]))
    assert row["run_id"] == "openmv-onboard-s1"
    assert float(row["accuracy"]) == pytest.approx(int(row["correct"]) / int(row["targets"]), abs=1e-4)
    assert read_csv(paths["timeline"])[0] == TIMELINE_HEADER
    conf = read_csv(paths["confusion"])
    assert conf[0] == ["truth", "pred_mask", "pred_no_mask"]
    assert sum(int(v) for r in conf[1:] for v in r[1:]) == rep.decisions


def test_batch_summary_has_mean_row(tmp_path):
    cfg = MissionConfig(time_limit_s=5.0)
    reports = run_batch(cfg, 10)
    assert [r.run_id for r in reports] == [f"openmv-onboard-s{i}" for i in range(10)]
    rows = read_csv(export_batch(reports, tmp_path, "hover"))
    assert len(rows) == 1 + 10 + 1
    assert rows[-1][0] == "mean"
    assert float(rows[-1][3]) == pytest.approx(np.mean([r.flight_time for r in reports]), abs=1e-3)


def test_reseed_moves_targets():
    cfg = MissionConfig(scene=SceneSpec.random(2, seed=0))
    other = reseed(cfg, 5)
    assert other.seed == 5 and len(other.scene.targets) == 2
    assert other.scene.targets != cfg.scene.targets


def test_link_failure_aborts():
    cfg = MissionConfig(link=LinkConfig(drop_probability=1.0, retries=1), time_limit_s=60)
    rep = run_mission(cfg)
    assert rep.outcome == "aborted"
    assert rep.link_timeouts == cfg.max_link_failures
    assert rep.flight_time == 0.0


def test_lossy_link_still_flies():
    cfg = MissionConfig(link=LinkConfig(drop_probability=0.2, one_way_latency=0.02), time_limit_s=30)
    rep = run_mission(cfg)
    assert rep.outcome == "time_limit"
    assert rep.flight_time > 20


def test_decision_periods():
    assert MissionConfig(payload="openmv").decision_period == 0.859
    assert MissionConfig(payload="arduino").decision_period == 7.235
    cfg = MissionConfig(inference_mode="distributed", remote_compute_s=0.2,
                        link=LinkConfig(one_way_latency=0.05))
    assert cfg.decision_period == pytest.approx(0.3)
    assert cfg.energy_payload is PayloadConfig.DISTRIBUTED
    assert MissionConfig(inference_latency_s=2.0).decision_period == 2.0


def test_distributed_drains_slower_than_openmv():
    base = MissionConfig(time_limit_s=60.0)
    onboard = run_mission(base)
    offload = run_mission(replace(base, inference_mode=InferenceMode.DISTRIBUTED))
    assert offload.energy_used < onboard.energy_used
    assert offload.run_id == "distributed-distributed-s0"


def test_energy_override_shortens_flight():
    rep = run_mission(MissionConfig(energy_overrides={"energy.openmv.hover.endurance_s": "100"}))
    assert rep.outcome == "depleted"
    assert rep.flight_time == pytest.approx(100, abs=1)


def test_parse_config_text():
    raw = parse_config_text("# comment\npayload = arduino\n\nlink.one_way_latency=0.05  # trailing\n")
    assert raw == {"payload": "arduino", "link.one_way_latency": "0.05"}
    with pytest.raises(ConfigError):
        parse_config_text("no equals sign")


def test_config_from_mapping():
    cfg = config_from_mapping({"payload": "arduino", "seed": "3", "scene.targets": "4", "pid.kp": "0.4",
                               "sim.v_max": "2", "patrol": "yes", "energy.arduino.hover.budget_j": "5000"})
    assert cfg.payload is PayloadConfig.ARDUINO_NANO and cfg.seed == 3 and cfg.kp == 0.4
    assert len(cfg.scene.targets) == 4 and cfg.sim.v_max == 2.0 and cfg.patrol


@pytest.mark.parametrize("raw", [{"bogus": "1"}, {"payload": "gpu"}, {"dt": "0"}, {"seed": "x"},
                                 {"link.drop_probability": "2"}, {"energy.openmv.hover.watts": "1"},
                                 {"patrol": "maybe"}])
def test_config_errors(raw):
    with pytest.raises(ConfigError):
        config_from_mapping(raw)


def test_load_config_names_path(tmp_path):
    missing = tmp_path / "missing.cfg"
    with pytest.raises(ConfigError, match="missing.cfg"):
        load_config(missing)
    good = tmp_path / "m.cfg"
    good.write_text("payload=openmv\ntime_limit_s=10\n")
    assert load_config(good).time_limit_s == 10.0


@pytest.mark.parametrize("name", ["hover_openmv", "targets_openmv", "targets_distributed", "patrol_arduino"])
def test_shipped_configs_load(name):
    from pathlib import Path

    cfg = load_config(Path(__file__).parent.parent / "configs" / f"{name}.cfg")
    assert cfg.payload in PayloadConfig
