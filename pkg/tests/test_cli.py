import csv
import json

import numpy as np
import pytest

from donnsim.cli import DEFAULTS, build_parser, main
from donnsim.data_io import read_report
from donnsim.energy import EnergyConfig, optical_energy_per_bit

SUBCOMMANDS = ["energy", "ber", "channel-test", "train", "infer"]


def run(capsys, *argv):
    rc = main(list(argv))
    out = capsys.readouterr()
    return rc, out.out, out.err


@pytest.mark.parametrize("cmd", SUBCOMMANDS)
def test_help_documents_flags(cmd, capsys):
    with pytest.raises(SystemExit) as ei:
        main([cmd, "--help"])
    assert ei.value.code == 0
    text = capsys.readouterr().out
    sub = next(a for a in build_parser()._actions if a.dest == "command").choices[cmd]
    for action in sub._actions:
        for opt in action.option_strings:
            assert opt in text


def test_usage_errors_exit_1(tmp_path, capsys):
    assert run(capsys, "energy", "--bogus")[0] == 1
    assert run(capsys, "nosuchcmd")[0] == 1
    rc, _, err = run(capsys, "energy", "--sweep", "1:x:log", "--out", str(tmp_path))
    assert rc == 1 and "1:3000:log" in err
    assert run(capsys, "energy", "--preset", "moon", "--out", str(tmp_path))[0] == 1
    assert run(capsys, "ber", "--montecarlo", "--trials", "0.5", "--out", str(tmp_path))[0] == 1
    bad = tmp_path / "bad.yaml"
    bad.write_text("channel:\n  photon_count: 3\n")
    rc, _, err = run(capsys, "energy", "--config", str(bad), "--out", str(tmp_path))
    assert rc == 1 and "photon_count" in err
    rc, _, err = run(capsys, "infer", "--model", str(tmp_path / "none.bin"), "--out", str(tmp_path))
    assert rc == 1 and "none.bin" in err


def test_runtime_error_exit_2(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert run(capsys, "energy", "--out", str(blocker / "sub"))[0] == 2


def test_energy_presets(tmp_path, capsys):
    rc, out, _ = run(capsys, "energy", "--preset", "inter_chiplet", "--out", str(tmp_path))
    assert rc == 0
    line = next(l for l in out.splitlines() if l.startswith("inter_chiplet"))
    assert "90.3" in line and "0.179" in line
    assert "crossover length: 5.10 um" in out
    rep = read_report(tmp_path / "report.json")
    assert rep.energy["scenarios"]["inter_chiplet"]["e_elec_fj"] == 90.3
    assert json.loads((tmp_path / "energy_scenarios.json").read_text()).keys() == {"inter_chiplet"}
    rc, out, _ = run(capsys, "energy", "--preset", "all", "--out", str(tmp_path))
    assert all(name in out for name in ("inter_mac_min", "inter_mac_max", "inter_sram", "inter_chiplet"))


def test_energy_sweep(tmp_path, capsys):
    assert run(capsys, "energy", "--sweep", "5:5:lin", "--out", str(tmp_path))[0] == 0
    rows = list(csv.reader(open(tmp_path / "energy_sweep.csv")))
    assert rows[0] == ["length_um", "e_elec_fj", "e_donn_fj"] and len(rows) == 2
    assert run(capsys, "energy", "--sweep", "1:3000:log", "--gnuplot", "--out", str(tmp_path))[0] == 0
    assert len(list(csv.reader(open(tmp_path / "energy_sweep.csv")))) == 51
    assert "energy_sweep.csv" in (tmp_path / "energy_sweep.gp").read_text()


def test_config_layering(tmp_path, capsys, monkeypatch):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("seed: 5\nenergy:\n  wire_length_um: 8.0\nchannel:\n  xtalk_fraction: 0.1\n")
    run(capsys, "energy", "--config", str(cfg), "--out", str(tmp_path))
    rep = read_report(tmp_path / "report.json")
    assert rep.config["energy"]["wire_length_um"] == 8.0 and rep.seed == 5
    assert rep.energy["e_elec_fj"] == 0.272
    run(capsys, "energy", "--config", str(cfg), "--wire-length", "60", "--vdd", "0.75", "--out", str(tmp_path))
    assert read_report(tmp_path / "report.json").energy["e_elec_fj"] == 1.7
    monkeypatch.setenv("DONNSIM_CONFIG", str(cfg))
    run(capsys, "energy", "--out", str(tmp_path))
    rep = read_report(tmp_path / "report.json")
    assert rep.config["channel"]["xtalk_fraction"] == 0.1
    assert set(rep.config) == set(DEFAULTS)


def test_ber_table(tmp_path, capsys):
    rc, out, _ = run(capsys, "ber", "--table", "--out", str(tmp_path))
    assert rc == 0 and "10^-69" in out
    rep = read_report(tmp_path / "report.json")
    assert [r["n_p"] for r in rep.ber["table"]] == [10, 100, 1000]
    assert (tmp_path / "ber_table.csv").exists()


def test_ber_montecarlo_and_warning(tmp_path, capsys):
    rc, out, err = run(capsys, "ber", "--montecarlo", "--np", "100", "--trials", "1e4", "--out", str(tmp_path))
    assert rc == 0 and "too few trials" in err and "minimum" in err
    mc = read_report(tmp_path / "report.json").ber["montecarlo"]
    assert mc["n_0"] == mc["n_1"] == 10_000 and "table" not in read_report(tmp_path / "report.json").ber
    rc, out, err = run(capsys, "ber", "--montecarlo", "--np", "10", "--trials", "2e4", "--out", str(tmp_path))
    assert "too few" not in err and "95% CI" in out


def test_channel_test_outputs(tmp_path, capsys):
    rc, out, _ = run(capsys, "channel-test", "--rows", "200", "--cols", "200", "--frames", "3", "--out", str(tmp_path))
    assert rc == 0 and "improvement factor" in out
    rep = read_report(tmp_path / "report.json")
    assert rep.ber["improvement"] >= 10
    assert abs(rep.ber["xi_estimated"] - 0.19) <= 0.01
    for name in ("plain", "corrected"):
        assert (tmp_path / f"error_map_{name}.pgm").read_bytes().startswith(b"P5\n200 200\n255\n")


def test_channel_test_noiseless(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("channel:\n  enable_shot: false\n  enable_thermal: false\n")
    rc, _, _ = run(capsys, "channel-test", "--xi", "0", "--rows", "50", "--cols", "50",
                   "--config", str(cfg), "--out", str(tmp_path))
    rep = read_report(tmp_path / "report.json")
    assert rc == 0 and rep.ber["ber_plain"] == 0 and rep.ber["ber_corrected"] == 0


@pytest.mark.parametrize("argv", [
    ["ber", "--montecarlo", "--np", "10", "--trials", "1e4"],
    ["channel-test", "--rows", "60", "--cols", "60"],
])
def test_seeded_runs_are_reproducible(tmp_path, capsys, argv):
    reps = []
    for d in ("a", "b"):
        assert run(capsys, *argv, "--seed", "3", "--out", str(tmp_path / d))[0] == 0
        reps.append(read_report(tmp_path / d / "report.json").comparable())
    assert reps[0] == reps[1]
    run(capsys, *argv, "--seed", "4", "--out", str(tmp_path / "c"))
    assert read_report(tmp_path / "c" / "report.json").comparable() != reps[0]


@pytest.mark.slow
def test_train_and_infer(tmp_path, capsys, mnist):
    rc, out, _ = run(capsys, "train", "--epochs", "1", "--arch", "2layer", "--out", str(tmp_path))
    assert rc == 0 and (tmp_path / "model.bin").exists()
    assert 0.5 < read_report(tmp_path / "report.json").accuracy <= 1
    model = str(tmp_path / "model.bin")
    rc, _, _ = run(capsys, "infer", "--model", model, "--images", "1", "--out", str(tmp_path / "one"))
    rep = read_report(tmp_path / "one" / "report.json")
    assert rc == 0 and np.sum(rep.confusion_matrix) == 1
    rc, _, _ = run(capsys, "infer", "--model", model, "--images", "20", "--mode", "optical",
                   "--out", str(tmp_path / "opt"))
    rep = read_report(tmp_path / "opt" / "report.json")
    assert rc == 0
    e = rep.energy
    # 2-layer model: 8*49*20*100*2 + 8*100*20*10*2 received bits
    assert e["bits_received"] == 2 * 8 * 20 * (49 * 100 + 100 * 10)
    assert e["energy_optical"] == pytest.approx(e["bits_received"] * optical_energy_per_bit(EnergyConfig()), rel=1e-12)
    assert e["optical_check"] == pytest.approx(e["energy_optical"], rel=1e-12)
    assert np.array(rep.output_scores).shape == (10, 10) and len(rep.diag_differences) == 10
