import csv

import numpy as np
import pytest

from tinydrone.cli import main
from tinydrone.mission.scene import make_dataset


def test_simulate(capsys):
    assert main(["simulate", "--payload", "openmv", "--state", "hover"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("endurance_s=380 ")
    assert "energy_j=116280" in out


def test_simulate_options_after_subcommand(capsys):
    assert main(["simulate", "--payload", "nopayload", "--state", "maneuver", "--dt", "0.1"]) == 0
    assert capsys.readouterr().out.startswith("endurance_s=485 ")


def test_missing_config(capsys, tmp_path):
    path = tmp_path / "missing.cfg"
    assert main(["mission", "--config", str(path)]) == 1
    err = capsys.readouterr().err
    assert err.startswith("error code=config") and "missing.cfg" in err


def test_unknown_subcommand_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["fly"])
    assert exc.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_unknown_flag_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["simulate", "--warp"])
    assert exc.value.code == 2


def test_mission_and_report(tmp_path, capsys):
    cfg = tmp_path / "hover.cfg"
    cfg.write_text("payload=openmv\ntime_limit_s=5\n")
    out = tmp_path / "out"
    assert main(["mission", "--config", str(cfg), "--runs", "2", "--out", str(out)]) == 0
    assert (out / "openmv-onboard_summary.csv").exists()
    assert main(["report", str(out)]) == 0
    rows = list(csv.reader(open(out / "aggregate.csv")))
    assert rows[1][:3] == ["mean_of_2", "openmv", "onboard"]
    capsys.readouterr()


def test_report_empty_dir(tmp_path, capsys):
    assert main(["report", str(tmp_path)]) == 1
    assert "code=io" in capsys.readouterr().err


def test_bad_model_file(tmp_path, capsys):
    bad = tmp_path / "bad.twng"
    bad.write_bytes(b"nope")
    assert main(["quantize", str(bad), "--out", str(tmp_path)]) == 1
    assert "code=model" in capsys.readouterr().err


@pytest.mark.slow
def test_train_quantize_infer(tmp_path, capsys):
    out = str(tmp_path)
    assert main(["train", "--n-train", "200", "--out", out]) == 0
    model = tmp_path / "model_real32.twng"
    assert main(["quantize", str(model), "--calib", "20", "--out", out]) == 0
    text = capsys.readouterr().out
    ratio = float(text.split("flash_ratio=")[1].split()[0])
    assert 0.25 <= ratio <= 0.40
    frame = tmp_path / "frame.npy"
    np.save(frame, make_dataset(1, seed=1)[0][0])
    assert main(["infer", str(tmp_path / "model_int8.twng"), str(frame)]) == 0
    assert capsys.readouterr().out.startswith("label=")
    np.save(frame, np.zeros((10, 10, 3), np.uint8))
    assert main(["infer", str(model), str(frame)]) == 1
