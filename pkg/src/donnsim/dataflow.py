"""Output-stationary, bit-serial GEMM on a B x N grid of processing elements.

At time step (k, b) bit b of column X[:, k] is fanned out along the N PEs of
each row and bit b of row W[k, :] along the B PEs of each column.  Both
frames go through the optical channel; every PE shifts the received bits
into two registers and, after ``bits_per_value`` steps, performs one integer
multiply-accumulate.  Bits are sent MSB first.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import SimulationError, UsageError
from .channel import ChannelConfig, substream, transmit
from .energy import (
    ELECTRICAL_SWITCHING,
    OPTICAL_SWITCHING,
    EnergyConfig,
    electrical_energy_per_bit,
    optical_energy_per_bit,
)
from .quantize import QuantTensor, fit_quant_params, quantize

ACCUMULATOR_LIMIT = 2**32
# RNG key arms for the two broadcast frames
ARM_ACT, ARM_WEIGHT = 0, 1


@dataclass(frozen=True)
class GemmShape:
    B: int
    K: int
    N: int
    bits_per_value: int = 8

    def __post_init__(self):
        for name in ("B", "K", "N", "bits_per_value"):
            if int(getattr(self, name)) < 1:
                raise UsageError(f"GemmShape.{name} must be >= 1, got {getattr(self, name)}")

    @property
    def steps(self) -> int:
        return self.bits_per_value * self.K

    @property
    def source_bits(self) -> int:
        return self.bits_per_value * self.K * (self.B + self.N)

    @property
    def received_bits(self) -> int:
        return 2 * self.bits_per_value * self.K * self.B * self.N


@dataclass
class EnergyTally:
    bits_transmitted: int = 0
    bits_received: int = 0
    zero_to_one_transitions: int = 0
    ones_transmitted: int = 0
    energy_electrical: float = 0.0
    energy_optical: float = 0.0
    energy_repeater: float = 0.0
    macs_performed: int = 0
    steps: int = 0

    def add(self, other: "EnergyTally") -> "EnergyTally":
        for name, value in asdict(other).items():
            setattr(self, name, getattr(self, name) + value)
        return self

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class BerCounter:
    """Running error counts over every received bit of a run."""
    errors_0: int = 0
    errors_1: int = 0
    n_0: int = 0
    n_1: int = 0

    def update(self, sent: np.ndarray, received: np.ndarray) -> int:
        s = sent.astype(bool)
        err = s != received.astype(bool)
        e1 = int((err & s).sum())
        e0 = int(err.sum()) - e1
        n1 = int(s.sum())
        self.errors_0 += e0
        self.errors_1 += e1
        self.n_1 += n1
        self.n_0 += s.size - n1
        return e0 + e1

    def add(self, other: "BerCounter") -> "BerCounter":
        for name, value in asdict(other).items():
            setattr(self, name, getattr(self, name) + value)
        return self

    @property
    def n_bits(self) -> int:
        return self.n_0 + self.n_1

    @property
    def errors(self) -> int:
        return self.errors_0 + self.errors_1

    def summary(self) -> dict:
        n = self.n_bits
        return {
            "ber_total": self.errors / n if n else 0.0,
            "ber_0": self.errors_0 / self.n_0 if self.n_0 else 0.0,
            "ber_1": self.errors_1 / self.n_1 if self.n_1 else 0.0,
            "errors_0": self.errors_0,
            "errors_1": self.errors_1,
            "n_0": self.n_0,
            "n_1": self.n_1,
        }


def _as_int(x, name: str) -> np.ndarray:
    data = x.data if isinstance(x, QuantTensor) else np.asarray(x)
    if data.ndim != 2:
        raise UsageError(f"{name} must be 2-D, got shape {data.shape}")
    if data.size and (not np.issubdtype(data.dtype, np.integer) and not np.all(data == np.rint(data))):
        raise UsageError(f"{name} must hold integers")
    return data.astype(np.int64)


def analytic_tally(shape: GemmShape, energy: EnergyConfig, topology: str = "per_hop") -> EnergyTally:
    """Energy of one GEMM with the random-data switching factors (1/4 and 1/2)."""
    if topology not in ("per_hop", "bus"):
        raise UsageError(f"topology must be 'per_hop' or 'bus', got {topology!r}")
    received = shape.received_bits
    repeater = 0.0
    if topology == "per_hop":
        repeater = received * ELECTRICAL_SWITCHING * energy.c_inverter * energy.v_dd**2
    return EnergyTally(
        bits_transmitted=shape.source_bits,
        bits_received=received,
        energy_electrical=received * electrical_energy_per_bit(energy),
        energy_optical=received * optical_energy_per_bit(energy),
        energy_repeater=repeater,
        macs_performed=shape.B * shape.N * shape.K,
        steps=shape.steps,
    )


def _empirical_energy(tally: EnergyTally, energy: EnergyConfig, topology: str) -> None:
    # a 0->1 transition costs C V^2; a '1' costs the photons of one charge-up
    c_load = energy.c_wire_per_um * energy.wire_length_um + energy.c_inverter
    tally.energy_electrical = tally.zero_to_one_transitions * c_load * energy.v_dd**2
    tally.energy_optical = tally.ones_transmitted * optical_energy_per_bit(energy) / OPTICAL_SWITCHING
    tally.energy_repeater = 0.0
    if topology == "per_hop":
        tally.energy_repeater = tally.zero_to_one_transitions * energy.c_inverter * energy.v_dd**2


def step_frames(x: np.ndarray, w: np.ndarray, k: int, b: int):
    """Detector frames of step (k, b): bit b of X[:, k] along rows, of W[k, :] along columns."""
    B, N = x.shape[0], w.shape[1]
    a_frame = np.broadcast_to(((x[:, k] >> b) & 1)[:, None], (B, N))
    w_frame = np.broadcast_to(((w[k, :] >> b) & 1)[None, :], (B, N))
    return a_frame, w_frame


def bit_serial_gemm(
    X,
    W,
    channel: ChannelConfig | None = None,
    energy: EnergyConfig | None = None,
    *,
    bits_per_value: int = 8,
    energy_mode: str = "analytic",
    topology: str = "per_hop",
    rng_key: tuple = (),
    trace: list | None = None,
):
    """Simulate Y = X @ W step by step; return (Y, tally, ber_counter).

    ``rng_key`` is appended to the channel seed so every (key, step, frame)
    draws from its own substream.  If ``trace`` is a list, one record per
    step is appended to it.
    """
    x = _as_int(X, "X")
    w = _as_int(W, "W")
    if x.shape[1] != w.shape[0]:
        raise UsageError(f"shape mismatch: X is {x.shape}, W is {w.shape}")
    if energy_mode not in ("analytic", "empirical"):
        raise UsageError(f"energy_mode must be 'analytic' or 'empirical', got {energy_mode!r}")
    shape = GemmShape(x.shape[0], x.shape[1], w.shape[1], bits_per_value)
    top = (1 << bits_per_value) - 1
    for name, a in (("X", x), ("W", w)):
        if a.size and (a.min() < 0 or a.max() > top):
            raise UsageError(f"{name} values must lie in [0, {top}]")
    if shape.K * top * top >= ACCUMULATOR_LIMIT:
        raise SimulationError(f"accumulator overflow: K={shape.K} at {bits_per_value} bits exceeds 32-bit range")
    channel = channel or ChannelConfig.noiseless()
    energy = energy or EnergyConfig()
    tally = analytic_tally(shape, energy, topology)
    ber = BerCounter()
    B, K, N = shape.B, shape.K, shape.N

    acc = np.zeros((B, N), dtype=np.int64)
    wire_a = np.zeros((B, N), dtype=bool)  # last bit on each receiver wire
    wire_w = np.zeros((B, N), dtype=bool)
    transitions = ones = 0
    step = 0
    for k in range(K):
        reg_a = np.zeros((B, N), dtype=np.int64)
        reg_w = np.zeros((B, N), dtype=np.int64)
        for b in range(bits_per_value - 1, -1, -1):
            a_frame, w_frame = step_frames(x, w, k, b)
            got_a = transmit(a_frame, channel, substream(channel.seed, *rng_key, step, ARM_ACT))
            got_w = transmit(w_frame, channel, substream(channel.seed, *rng_key, step, ARM_WEIGHT))
            errs = ber.update(a_frame, got_a) + ber.update(w_frame, got_w)
            if energy_mode == "empirical":
                for frame, wire in ((a_frame, wire_a), (w_frame, wire_w)):
                    f = frame.astype(bool)
                    transitions += int((f & ~wire).sum())
                    ones += int(f.sum())
                    wire[...] = f
            reg_a = (reg_a << 1) | got_a
            reg_w = (reg_w << 1) | got_w
            if trace is not None:
                trace.append({"step": step, "k": k, "bit_index": b, "ber_this_step": errs / (2 * B * N)})
            step += 1
        acc += reg_a * reg_w
    if step != shape.steps:
        raise SimulationError(f"simulated {step} steps, expected {shape.steps}")
    tally.zero_to_one_transitions = transitions
    tally.ones_transmitted = ones
    if energy_mode == "empirical":
        _empirical_energy(tally, energy, topology)
    return acc, tally, ber


def write_trace(trace: list, path) -> None:
    with open(path, "w") as fh:
        for rec in trace:
            fh.write(json.dumps(rec) + "\n")


def empirical_switching_factor(bit_stream, mode: str = "electrical") -> float:
    """0->1 transitions per bit (electrical) or fraction of '1's (optical)."""
    s = np.asarray(bit_stream).astype(bool).ravel()
    if s.size < 2:
        raise UsageError("bit stream must hold at least 2 bits")
    if mode == "electrical":
        return int((~s[:-1] & s[1:]).sum()) / s.size
    if mode == "optical":
        return int(s.sum()) / s.size
    raise UsageError(f"mode must be 'electrical' or 'optical', got {mode!r}")


# --- quantized fully-connected layer ---------------------------------------

MODES = ("ideal", "optical", "electrical")


class LayerResult(NamedTuple):
    output: np.ndarray
    tally: EnergyTally
    ber: BerCounter
    steps: int


@dataclass
class LayerConfig:
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    energy: EnergyConfig = field(default_factory=EnergyConfig)
    energy_mode: str = "analytic"
    topology: str = "per_hop"


def quantize_rows(x: np.ndarray):
    """Per-row affine quantization; returns (q, scale, minimum) with column vectors."""
    x = np.asarray(x, dtype=np.float64)
    q = np.empty(x.shape, dtype=np.int64)
    scale = np.empty((x.shape[0], 1))
    lo = np.empty((x.shape[0], 1))
    for i, row in enumerate(x):
        p = fit_quant_params(row)
        q[i] = quantize(row, p).data
        scale[i, 0], lo[i, 0] = p.scale, p.floating_min
    return q, scale, lo


def affine_matmul(acc, qx, sx, mx, qw, sw, mw) -> np.ndarray:
    """Recover X @ W from the integer product of affine-quantized factors."""
    K = qx.shape[1]
    return (sx * sw * acc + sx * mw * qx.sum(axis=1, keepdims=True)
            + mx * sw * qw.sum(axis=0, keepdims=True) + K * mx * mw)


def run_layer(activations, weights, bias=None, mode: str = "ideal", cfg: LayerConfig | None = None,
              rng_key: tuple = ()) -> LayerResult:
    """Quantize, multiply on the simulated PE grid and dequantize one FC layer.

    ``ideal`` multiplies the quantized integers directly, ``electrical`` runs
    the bit-serial grid over a noiseless link and ``optical`` over the
    configured noisy channel.  Energy is tallied the same way in all modes.
    """
    if mode not in MODES:
        raise UsageError(f"mode must be one of {MODES}, got {mode!r}")
    cfg = cfg or LayerConfig()
    a = np.atleast_2d(np.asarray(activations, dtype=np.float64))
    w = np.asarray(weights, dtype=np.float64)
    if a.shape[1] != w.shape[0]:
        raise UsageError(f"shape mismatch: activations {a.shape}, weights {w.shape}")
    qx, sx, mx = quantize_rows(a)
    wp = fit_quant_params(w)
    qw = quantize(w, wp).data.astype(np.int64)
    shape = GemmShape(a.shape[0], a.shape[1], w.shape[1])
    if mode == "ideal":
        acc = qx @ qw
        tally = analytic_tally(shape, cfg.energy, cfg.topology)
        ber = BerCounter()
    else:
        channel = cfg.channel if mode == "optical" else ChannelConfig.noiseless(seed=cfg.channel.seed)
        acc, tally, ber = bit_serial_gemm(qx, qw, channel, cfg.energy, energy_mode=cfg.energy_mode,
                                          topology=cfg.topology, rng_key=rng_key)
    out = affine_matmul(acc, qx, sx, mx, qw, wp.scale, wp.floating_min)
    if bias is not None:
        out = out + np.asarray(bias, dtype=np.float64)
    return LayerResult(out, tally, ber, shape.steps)


def write_tally_json(tally: EnergyTally, path) -> None:
    Path(path).write_text(json.dumps(tally.to_dict(), indent=2) + "\n")
