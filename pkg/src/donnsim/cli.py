"""``donnsim`` command line: energy tables, BER checks, channel tests, MNIST.

Configuration is layered: built-in defaults, then a YAML file (``--config``
or the ``DONNSIM_CONFIG`` environment variable), then command-line flags.
Every run writes ``report.json`` with the fully resolved configuration to
the output directory.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import copy
import datetime
import logging
import math
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import ConfigError, SimulationError, UsageError, __version__
from .ber import BerConfig, ber0, ber1_exact, ber1_shot, ber1_total, ber_table, format_table, write_table_csv
from .channel import (
    ChannelConfig,
    alternating_frame,
    correction_experiment,
    estimate_xtalk,
    receive,
    simulate_bit_errors,
    substream,
    write_pgm,
)
from .data_io import RunReport, load_mnist, write_report
from .dataflow import LayerConfig
from .energy import (
    PRESETS,
    EnergyConfig,
    crossover_length,
    electrical_energy_per_bit,
    optical_energy_per_bit,
    parse_sweep,
    photons_per_bit,
    scenario_report,
    sweep_energy,
    to_fj,
    write_scenario_json,
    write_sweep_csv,
)
from .network import TrainConfig, confusion_and_scores, forward_float, load_model, save_model, train
from .quantize import preprocess_images

log = logging.getLogger("donnsim")
CONFIG_ENV = "DONNSIM_CONFIG"


def _without(d: dict, *keys) -> dict:
    return {k: v for k, v in d.items() if k not in keys}


DEFAULTS = {
    "seed": 0,
    "energy": EnergyConfig().to_dict(),
    "channel": _without(ChannelConfig().to_dict(), "seed"),
    "ber": {"n_p": [10, 100, 1000], "temperatures": [300.0, 500.0],
            "mc_n_p": 100.0, "mc_temperature": 300.0, "trials": 1_000_000},
    "channel_test": {"rows": 500, "cols": 500, "frames": 4},
    "train": _without(TrainConfig().to_dict(), "seed"),
    "infer": {"mode": "ideal", "images": 500, "energy_mode": "analytic", "topology": "per_hop",
              "reference_mode": "ideal"},
    "data": {"mnist_dir": None},
}


class ArgParser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def merge_config(base: dict, override: dict, where: str = "config") -> dict:
    """Deep-merge ``override`` into a copy of ``base``; unknown keys are errors."""
    out = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if key not in out:
            raise ConfigError(f"{where}: unknown key {key!r} (known: {', '.join(sorted(out))})")
        if isinstance(out[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{where}.{key} must be a mapping")
            out[key] = merge_config(out[key], value, f"{where}.{key}")
        else:
            out[key] = value
    return out


def load_config_file(path) -> dict:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file {path} is not valid YAML: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a mapping at the top level")
    return data


# flag dest -> config path
FLAG_MAP = {
    "seed": ("seed",),
    "wire_length": ("energy", "wire_length_um"),
    "vdd": ("energy", "v_dd"),
    "xi": ("channel", "xtalk_fraction"),
    "n_p": ("channel", "photons_per_bit"),
    "temperature": ("channel", "temperature_k"),
    "mc_np": ("ber", "mc_n_p"),
    "mc_temperature": ("ber", "mc_temperature"),
    "trials": ("ber", "trials"),
    "rows": ("channel_test", "rows"),
    "cols": ("channel_test", "cols"),
    "frames": ("channel_test", "frames"),
    "arch": ("train", "arch"),
    "epochs": ("train", "epochs"),
    "lr": ("train", "lr"),
    "batch_size": ("train", "batch_size"),
    "dropout": ("train", "dropout"),
    "momentum": ("train", "momentum"),
    "mode": ("infer", "mode"),
    "images": ("infer", "images"),
    "energy_mode": ("infer", "energy_mode"),
    "topology": ("infer", "topology"),
    "mnist_dir": ("data", "mnist_dir"),
}


def resolve_config(args) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    path = args.config or os.environ.get(CONFIG_ENV)
    if path:
        cfg = merge_config(cfg, load_config_file(path))
    for dest, keys in FLAG_MAP.items():
        value = getattr(args, dest, None)
        if value is None:
            continue
        node = cfg
        for k in keys[:-1]:
            node = node[k]
        node[keys[-1]] = value
    return cfg


def energy_config(cfg: dict) -> EnergyConfig:
    return EnergyConfig(**cfg["energy"])


def channel_config(cfg: dict) -> ChannelConfig:
    return ChannelConfig(seed=int(cfg["seed"]), **cfg["channel"])


def _trials(text: str) -> int:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if value < 1 or value != int(value):
        raise argparse.ArgumentTypeError(f"trials must be a positive integer, got {text!r}")
    return int(value)


# --- subcommands ----------------------------------------------------------

def cmd_energy(args, cfg, out: Path, report: RunReport) -> None:
    ecfg = energy_config(cfg)
    results = {
        "e_elec_fj": to_fj(electrical_energy_per_bit(ecfg)),
        "e_donn_fj": to_fj(optical_energy_per_bit(ecfg)),
        "photons_per_bit": photons_per_bit(ecfg),
        "crossover_um": crossover_length(ecfg),
    }
    if args.preset:
        grid = scenario_report(ecfg)
        if args.preset != "all":
            if args.preset not in grid:
                raise UsageError(f"unknown preset {args.preset!r}; choose all or one of {', '.join(PRESETS)}")
            grid = {args.preset: grid[args.preset]}
        print(f"{'scenario':<15} {'L_wire (um)':>11} {'V_DD (V)':>8} {'E_elec (fJ)':>11} {'E_DONN (fJ)':>11}")
        for name, row in grid.items():
            print(f"{name:<15} {row['wire_length_um']:>11g} {row['v_dd']:>8.2f} "
                  f"{row['e_elec_fj']:>11.3g} {row['e_donn_fj']:>11.3g}")
        write_scenario_json(grid, out / "energy_scenarios.json")
        results["scenarios"] = grid
    if args.sweep:
        rows = sweep_energy(ecfg, parse_sweep(args.sweep))
        write_sweep_csv(rows, out / "energy_sweep.csv")
        results["sweep_points"] = len(rows)
        print(f"wrote {len(rows)} sweep rows to {out / 'energy_sweep.csv'}")
        if args.gnuplot:
            (out / "energy_sweep.gp").write_text(
                "set datafile separator ','\nset logscale xy\nset key top left\n"
                "set xlabel 'wire length (um)'\nset ylabel 'energy per bit (fJ)'\n"
                "plot 'energy_sweep.csv' every ::1 using 1:2 with lines title 'electrical', \\\n"
                "     '' every ::1 using 1:3 with lines title 'optical'\n")
    print(f"photons per bit: {results['photons_per_bit']:.1f}")
    print(f"crossover length: {results['crossover_um']:.2f} um")
    report.energy = results


def cmd_ber(args, cfg, out: Path, report: RunReport) -> None:
    b = cfg["ber"]
    results = {}
    if args.table or not args.montecarlo:
        rows = ber_table(b["n_p"], b["temperatures"], BerConfig(1, c_total=cfg["channel"]["c_total"]))
        print(format_table(rows))
        write_table_csv(rows, out / "ber_table.csv")
        results["table"] = [r._asdict() for r in rows]
    if args.montecarlo:
        n_p, temp, trials = float(b["mc_n_p"]), float(b["mc_temperature"]), int(b["trials"])
        bcfg = BerConfig(n_p, temp, cfg["channel"]["c_total"])
        p0, p1 = ber0(bcfg), ber1_exact(bcfg)
        target = min(p for p in (p0, p1) if p > 0) if max(p0, p1) > 0 else 0.0
        if target > 0 and trials * target < 10:
            need = math.ceil(10 / target)
            log.warning("%d trials expect fewer than 10 errors at BER %.3g; use at least %d trials", trials, target, need)
            print(f"warning: too few trials for BER {target:.3g}; minimum about {need}", file=sys.stderr)
        ccfg = channel_config(cfg).with_(photons_per_bit=n_p, temperature_k=temp)
        mc = simulate_bit_errors(ccfg, trials)
        print(f"Monte Carlo n_p={n_p:g} T={temp:g} K, {trials} trials per bit value")
        for label, est, p, n in (("BER0", mc["ber_0"], p0, mc["n_0"]), ("BER1", mc["ber_1"], p1, mc["n_1"])):
            se = math.sqrt(p * (1 - p) / n)
            print(f"  {label}: simulated {est:.4g}  analytic {p:.4g}  "
                  f"95% CI [{max(0.0, est - 1.96 * se):.4g}, {est + 1.96 * se:.4g}]  z={(est - p) / se if se else 0:.2f}")
        results["montecarlo"] = {**mc, "analytic_ber_0": p0, "analytic_ber_1": p1,
                                 "ber1_shot": ber1_shot(bcfg), "ber1_total": ber1_total(bcfg)}
    report.ber = results


def cmd_channel_test(args, cfg, out: Path, report: RunReport) -> None:
    ccfg = channel_config(cfg)
    t = cfg["channel_test"]
    res = correction_experiment(ccfg, int(t["rows"]), int(t["cols"]), int(t["frames"]))
    for name, emap in res.pop("error_maps").items():
        write_pgm(emap, out / f"error_map_{name}.pgm")
    xi_hat = None
    if ccfg.enable_xtalk and ccfg.xtalk_fraction > 0:
        cal = alternating_frame(int(t["rows"]), int(t["cols"]), "row")
        xi_hat = estimate_xtalk(receive(cal, ccfg.with_(correct=False), substream(ccfg.seed, 13)), "row")
        res["xi_estimated"] = xi_hat
    bound = ">=" if res["improvement_is_lower_bound"] else "="
    print(f"bits per arm: {res['n_bits']}")
    print(f"BER without correction: {res['ber_plain']:.3g} ({res['errors_plain']} errors)")
    print(f"BER with correction:    {res['ber_corrected']:.3g} ({res['errors_corrected']} errors)")
    print(f"improvement factor {bound} {res['improvement']:.3g}")
    if xi_hat is not None:
        print(f"estimated crosstalk fraction: {xi_hat:.4f}")
    report.ber = res


def _load_sets(cfg, n_test: int, need_train: bool):
    d = cfg["data"]["mnist_dir"]
    test = load_mnist("test", d, max_items=n_test)
    train_set = load_mnist("train", d) if need_train else None
    return train_set, test


def cmd_train(args, cfg, out: Path, report: RunReport) -> None:
    tcfg = TrainConfig(seed=int(cfg["seed"]), **cfg["train"])
    train_set, test = _load_sets(cfg, 500, True)
    res = train(preprocess_images(train_set.images), train_set.labels, tcfg)
    model_path = Path(args.model_out) if args.model_out else out / "model.bin"
    save_model(res.model, model_path)
    x_test = preprocess_images(test.images)
    acc = float((forward_float(res.model, x_test).argmax(axis=1) == test.labels).mean())
    print(f"final training loss {res.epoch_losses[-1]:.4f}" if res.epoch_losses else "no epochs run")
    print(f"float accuracy on first {len(test)} test images: {acc:.2%}")
    print(f"model written to {model_path}")
    report.accuracy = acc
    report.results = {"epoch_losses": res.epoch_losses}


def cmd_infer(args, cfg, out: Path, report: RunReport) -> None:
    inf = cfg["infer"]
    model_path = Path(args.model)
    if not model_path.exists():
        raise UsageError(f"model file not found: {model_path}")
    n = int(inf["images"])
    if n < 1:
        raise UsageError("--images must be >= 1")
    model = load_model(model_path)
    _, test = _load_sets(cfg, n, False)
    x = preprocess_images(test.images)
    ecfg = energy_config(cfg)
    layer_cfg = LayerConfig(channel_config(cfg), ecfg, inf["energy_mode"], inf["topology"])
    ev = confusion_and_scores(model, x, test.labels, inf["mode"], layer_cfg, inf["reference_mode"])
    tally = ev.tally.to_dict()
    expected_optical = ev.tally.bits_received * optical_energy_per_bit(ecfg)
    print(f"mode {inf['mode']}: accuracy {ev.accuracy:.2%} on {len(test)} images "
          f"({inf['reference_mode']} reference {ev.reference_accuracy:.2%})")
    print(f"bit errors: {ev.ber.errors} of {ev.ber.n_bits}")
    print(f"optical energy per inference: {ev.tally.energy_optical / len(test):.4g} J, "
          f"electrical: {ev.tally.energy_electrical / len(test):.4g} J")
    print("output-score diagonal differences: " + " ".join(f"{d:+.4f}" for d in ev.diag_differences))
    report.accuracy = ev.accuracy
    report.confusion_matrix = ev.confusion
    report.output_scores = ev.scores.matrix
    report.diag_differences = ev.diag_differences
    report.energy = {**tally, "per_inference_optical": ev.tally.energy_optical / len(test),
                     "per_inference_electrical": ev.tally.energy_electrical / len(test),
                     "optical_check": expected_optical}
    report.ber = ev.ber.summary()
    report.results = {"reference_accuracy": ev.reference_accuracy, "class_counts": ev.scores.counts,
                      "images": len(test), "model": str(model_path), "steps": ev.steps}


COMMANDS = {"energy": cmd_energy, "ber": cmd_ber, "channel-test": cmd_channel_test,
            "train": cmd_train, "infer": cmd_infer}


def build_parser() -> ArgParser:
    common = ArgParser(add_help=False)
    g = common.add_argument_group("common options")
    g.add_argument("--config", help=f"YAML config file (default: ${CONFIG_ENV})")
    g.add_argument("--out", default="donnsim-out", help="output directory (default: %(default)s)")
    g.add_argument("--seed", type=int, help="RNG seed for every stochastic stage")
    g.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")

    p = ArgParser(prog="donnsim", description="Digital optical neural network simulator.")
    p.add_argument("--version", action="version", version=f"donnsim {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=ArgParser)

    e = sub.add_parser("energy", parents=[common], help="interconnect energy presets and sweeps")
    e.add_argument("--preset", help="'all' or one of: " + ", ".join(PRESETS))
    e.add_argument("--sweep", help="wire-length sweep start:stop:lin|log[:count], e.g. 1:3000:log")
    e.add_argument("--wire-length", dest="wire_length", type=float, help="wire length in um")
    e.add_argument("--vdd", type=float, help="supply voltage in V")
    e.add_argument("--gnuplot", action="store_true", help="also write a gnuplot script for the sweep")

    b = sub.add_parser("ber", parents=[common], help="analytic BER table and Monte-Carlo validation")
    b.add_argument("--table", action="store_true", help="print the BER table (default when --montecarlo is absent)")
    b.add_argument("--montecarlo", action="store_true", help="simulate isolated bits through the channel")
    b.add_argument("--np", dest="mc_np", type=float, help="photons per bit for the Monte-Carlo run")
    b.add_argument("--temperature", dest="mc_temperature", type=float, help="temperature (K) for the Monte-Carlo run")
    b.add_argument("--trials", type=_trials, help="trials per bit value, e.g. 1e7")

    c = sub.add_parser("channel-test", parents=[common], help="random frames through the channel, with/without correction")
    c.add_argument("--xi", type=float, help="crosstalk fraction")
    c.add_argument("--np", dest="n_p", type=float, help="photons per bit")
    c.add_argument("--temperature", type=float, help="temperature in K")
    c.add_argument("--rows", type=int, help="frame rows")
    c.add_argument("--cols", type=int, help="frame columns")
    c.add_argument("--frames", type=int, help="number of random frames")

    t = sub.add_parser("train", parents=[common], help="train the MNIST classifier")
    t.add_argument("--arch", choices=["3layer", "2layer"])
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--dropout", type=float)
    t.add_argument("--momentum", type=float)
    t.add_argument("--mnist-dir", dest="mnist_dir", help="directory with the MNIST IDX files")
    t.add_argument("--model-out", dest="model_out", help="model file path (default: OUT/model.bin)")

    i = sub.add_parser("infer", parents=[common], help="quantized inference through the simulated hardware")
    i.add_argument("--model", required=True, help="model file written by 'train'")
    i.add_argument("--mode", choices=["ideal", "optical", "electrical"])
    i.add_argument("--images", type=int, help="number of test images (from the start of the test set)")
    i.add_argument("--xi", type=float, help="crosstalk fraction")
    i.add_argument("--np", dest="n_p", type=float, help="photons per bit")
    i.add_argument("--temperature", type=float, help="temperature in K")
    i.add_argument("--energy-mode", dest="energy_mode", choices=["analytic", "empirical"])
    i.add_argument("--topology", choices=["per_hop", "bus"])
    i.add_argument("--mnist-dir", dest="mnist_dir", help="directory with the MNIST IDX files")
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(message)s")
        cfg = resolve_config(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        report = RunReport(command=args.command, config=cfg, seed=int(cfg["seed"]),
                           version=f"donnsim {__version__}; numpy {np.__version__}; python {platform.python_version()}",
                           created=datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds"))
        start = time.perf_counter()
        COMMANDS[args.command](args, cfg, out, report)
        report.wall_clock_s = time.perf_counter() - start
        write_report(report, out / "report.json")
        log.info("report written to %s", out / "report.json")
        return 0
    except (UsageError, ConfigError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (SimulationError, OSError, ValueError, ArithmeticError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
