"""Interconnect energy per bit for electrical wires and optical links.

Electrical: a wire of length L charges (C_wire*L + C_T) to V_DD on 0->1
transitions only, which occur for 1/4 of random bit pairs.

Optical: a source emits n_p photons for every '1' (half of random bits) to
build V_DD on the receiverless detector + inverter, divided by the source
wall-plug efficiency.  The cost does not depend on distance.

All energies are in joules; helpers convert to fJ for reports.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Iterable, NamedTuple

from scipy.constants import e as ELEMENTARY_CHARGE

from . import ConfigError, UsageError

ELECTRICAL_SWITCHING = 0.25
OPTICAL_SWITCHING = 0.5

FEMTO = 1e-15


@dataclass(frozen=True)
class EnergyConfig:
    c_wire_per_um: float = 0.2e-15
    c_inverter: float = 0.1e-15
    c_detector: float = 0.1e-15
    v_dd: float = 0.80
    photon_energy_ev: float = 1.12
    wpe: float = 0.5
    wire_length_um: float = 5.0
    responsivity: float = 1.0
    # multiplies the optical energy only, e.g. 2.0 for waveguide loss compensation
    optical_loss_factor: float = 1.0

    def __post_init__(self):
        for name in ("c_wire_per_um", "c_inverter", "c_detector", "wire_length_um"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ConfigError(f"EnergyConfig.{name} must be finite and >= 0, got {value!r}")
        for name in ("v_dd", "photon_energy_ev", "optical_loss_factor"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ConfigError(f"EnergyConfig.{name} must be finite and > 0, got {value!r}")
        for name in ("wpe", "responsivity"):
            value = getattr(self, name)
            if not (0 < value <= 1):
                raise ConfigError(f"EnergyConfig.{name} must lie in (0, 1], got {value!r}")

    def with_(self, **changes) -> "EnergyConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ScenarioPreset:
    name: str
    wire_length_um: float
    v_dd: float


PRESETS = {
    p.name: p
    for p in (
        ScenarioPreset("inter_mac_min", 5.0, 0.80),
        ScenarioPreset("inter_mac_max", 8.0, 0.80),
        ScenarioPreset("inter_sram", 60.0, 0.75),
        ScenarioPreset("inter_chiplet", 2500.0, 0.85),
    )
}

# Optical V_DD stays at 0.80 V regardless of the electrical scenario.
OPTICAL_V_DD = 0.80


def electrical_energy_per_bit(cfg: EnergyConfig) -> float:
    c_load = cfg.c_wire_per_um * cfg.wire_length_um + cfg.c_inverter
    return ELECTRICAL_SWITCHING * c_load * cfg.v_dd**2


def photons_per_bit(cfg: EnergyConfig) -> float:
    """Photons needed to swing the detector + inverter load to V_DD."""
    return (cfg.c_detector + cfg.c_inverter) * cfg.v_dd / (ELEMENTARY_CHARGE * cfg.responsivity)


def photon_energy_j(cfg: EnergyConfig) -> float:
    return cfg.photon_energy_ev * ELEMENTARY_CHARGE


def optical_energy_per_bit(cfg: EnergyConfig) -> float:
    n_p = photons_per_bit(cfg)
    return OPTICAL_SWITCHING / cfg.wpe * photon_energy_j(cfg) * n_p * cfg.optical_loss_factor


def repeater_energy_per_bit(cfg: EnergyConfig) -> float:
    """Double-inverter repeater: one of the two inverters charges C_T per flip."""
    return cfg.c_inverter * cfg.v_dd**2


def crossover_length(cfg: EnergyConfig, optical_cfg: EnergyConfig | None = None) -> float:
    """Wire length (um) at which electrical and optical energy per bit are equal.

    ``optical_cfg`` lets the optical side use different parameters; by default
    both sides share ``cfg``.  Lengths below zero are clamped to 0 (optics
    already wins at zero length).
    """
    e_opt = optical_energy_per_bit(optical_cfg or cfg)
    if cfg.c_wire_per_um == 0:
        raise ConfigError("EnergyConfig.c_wire_per_um must be > 0 to solve for a crossover length")
    length = (e_opt / (ELECTRICAL_SWITCHING * cfg.v_dd**2) - cfg.c_inverter) / cfg.c_wire_per_um
    return max(0.0, length)


class EnergyRow(NamedTuple):
    length_um: float
    e_elec: float
    e_donn: float


def sweep_energy(cfg_base: EnergyConfig, lengths: Iterable[float]) -> list[EnergyRow]:
    lengths = [float(x) for x in lengths]
    if not lengths:
        raise UsageError("sweep_energy needs at least one length")
    if any(not (x > 0) for x in lengths):
        raise UsageError(f"sweep lengths must be > 0, got {lengths}")
    e_donn = optical_energy_per_bit(cfg_base)
    return [
        EnergyRow(x, electrical_energy_per_bit(cfg_base.with_(wire_length_um=x)), e_donn)
        for x in lengths
    ]


def parse_sweep(spec: str) -> list[float]:
    """Parse ``start:stop:lin|log[:count]`` into a list of lengths (um)."""
    parts = spec.split(":")
    if len(parts) not in (3, 4):
        raise UsageError(f"malformed sweep {spec!r}; expected start:stop:lin|log[:count], e.g. 1:3000:log")
    try:
        start, stop = float(parts[0]), float(parts[1])
        count = int(parts[3]) if len(parts) == 4 else None
    except ValueError:
        raise UsageError(f"malformed sweep {spec!r}; expected start:stop:lin|log[:count], e.g. 1:3000:log") from None
    kind = parts[2]
    if kind not in ("lin", "log"):
        raise UsageError(f"sweep spacing must be 'lin' or 'log', got {kind!r} (e.g. 1:3000:log)")
    if not (0 < start <= stop):
        raise UsageError(f"sweep needs 0 < start <= stop, got {start}:{stop}")
    if start == stop:
        return [start]
    if count is None:
        count = 50
    if count < 2:
        raise UsageError("sweep count must be >= 2 when start != stop")
    if kind == "lin":
        step = (stop - start) / (count - 1)
        return [start + i * step for i in range(count)]
    ratio = math.log(stop / start) / (count - 1)
    return [start * math.exp(i * ratio) for i in range(count)]


def to_fj(x: float) -> float:
    """Joules -> femtojoules rounded to 3 significant figures."""
    return float(f"{x / FEMTO:.3g}")


def write_sweep_csv(rows: list[EnergyRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["length_um", "e_elec_fj", "e_donn_fj"])
        for r in rows:
            w.writerow([f"{r.length_um:.6g}", to_fj(r.e_elec), to_fj(r.e_donn)])


def scenario_report(cfg: EnergyConfig | None = None) -> dict:
    """Energy per bit for every scenario preset, keyed by preset name."""
    cfg = cfg or EnergyConfig()
    optical = cfg.with_(v_dd=OPTICAL_V_DD)
    e_donn = optical_energy_per_bit(optical)
    report = {}
    for name, p in PRESETS.items():
        elec = cfg.with_(wire_length_um=p.wire_length_um, v_dd=p.v_dd)
        report[name] = {
            "wire_length_um": p.wire_length_um,
            "v_dd": p.v_dd,
            "e_elec_fj": to_fj(electrical_energy_per_bit(elec)),
            "e_donn_fj": to_fj(e_donn),
            "e_repeater_fj": to_fj(repeater_energy_per_bit(elec)),
        }
    return report


def write_scenario_json(report: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
