"""Optical bit transmission from source arrays to a 2-D detector grid.

Frames hold intensities in units of a single isolated '1' (1.0 = n_p
photoelectrons) until shot noise converts them to photoelectron counts.
The receive chain is

    bits -> fan-out -> crosstalk -> Poisson shot noise -> kT/C noise
         -> background/full-on normalization -> [crosstalk correction]
         -> threshold

``axis="row"`` acts along each row (between horizontally adjacent pixels,
numpy axis 1); ``axis="col"`` along each column (numpy axis 0); ``"both"``
applies rows then columns.
"""
from __future__ import annotations

import csv
import math
import struct
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
from scipy.constants import Boltzmann as K_B, e as ELEMENTARY_CHARGE

from . import CalibrationError, ConfigError, UsageError

_AXIS = {"row": 1, "col": 0}
FRAME_MAGIC = b"DONNFRM1"


@dataclass(frozen=True)
class ChannelConfig:
    xtalk_fraction: float = 0.19
    photons_per_bit: float = 1000.0
    temperature_k: float = 300.0
    c_total: float = 0.2e-15
    threshold_fraction: float = 0.5
    seed: int = 0
    enable_shot: bool = True
    enable_thermal: bool = True
    enable_xtalk: bool = True
    xtalk_axes: str = "both"
    correct: bool = False
    renorm: str = "calibrated"

    def __post_init__(self):
        if not 0 < self.threshold_fraction < 1:
            raise ConfigError(f"ChannelConfig.threshold_fraction must lie in (0, 1), got {self.threshold_fraction!r}")
        if not 0 <= self.xtalk_fraction < 0.5:
            raise ConfigError(f"ChannelConfig.xtalk_fraction must lie in [0, 0.5), got {self.xtalk_fraction!r}")
        if not self.photons_per_bit > 0:
            raise ConfigError(f"ChannelConfig.photons_per_bit must be > 0, got {self.photons_per_bit!r}")
        if not self.temperature_k > 0:
            raise ConfigError(f"ChannelConfig.temperature_k must be > 0, got {self.temperature_k!r}")
        if not self.c_total > 0:
            raise ConfigError(f"ChannelConfig.c_total must be > 0, got {self.c_total!r}")
        if self.xtalk_axes not in ("row", "col", "both"):
            raise ConfigError(f"ChannelConfig.xtalk_axes must be row, col or both, got {self.xtalk_axes!r}")
        if self.renorm not in ("calibrated", "max", "none"):
            raise ConfigError(f"ChannelConfig.renorm must be calibrated, max or none, got {self.renorm!r}")

    @classmethod
    def noiseless(cls, **kw) -> "ChannelConfig":
        base = dict(xtalk_fraction=0.0, enable_shot=False, enable_thermal=False, enable_xtalk=False)
        base.update(kw)
        return cls(**base)

    @property
    def sigma_j(self) -> float:
        """kT/C noise in electrons."""
        return math.sqrt(K_B * self.temperature_k * self.c_total) / ELEMENTARY_CHARGE

    @property
    def is_identity(self) -> bool:
        return not (self.enable_shot or self.enable_thermal or (self.enable_xtalk and self.xtalk_fraction > 0))

    def with_(self, **changes) -> "ChannelConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class BitFrame:
    intensities: np.ndarray

    def __post_init__(self):
        self.intensities = np.asarray(self.intensities, dtype=np.float64)
        if self.intensities.ndim != 2:
            raise UsageError(f"BitFrame needs a 2-D array, got shape {self.intensities.shape}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.intensities.shape


def _arr(frame) -> np.ndarray:
    return frame.intensities if isinstance(frame, BitFrame) else np.asarray(frame, dtype=np.float64)


def _axes(axis: str) -> list[int]:
    if axis == "both":
        return [1, 0]
    if axis not in _AXIS:
        raise UsageError(f"axis must be row, col or both, got {axis!r}")
    return [_AXIS[axis]]


def substream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for (seed, *key), e.g. (seed, layer, step, arm)."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(k) for k in key)))


def fan_out_row(bits, n_copies: int, transpose: bool = False) -> np.ndarray:
    """Replicate each bit across a row of ``n_copies`` receivers.

    Returns shape (len(bits), n_copies), or its transpose so that each bit
    occupies a column instead.
    """
    b = np.asarray(bits)
    if b.ndim != 1 or b.size == 0:
        raise UsageError("fan_out_row needs a non-empty 1-D bit vector")
    if n_copies < 1:
        raise UsageError(f"n_copies must be >= 1, got {n_copies}")
    grid = np.repeat(b[:, None], n_copies, axis=1)
    return grid.T if transpose else grid


def _leak(x: np.ndarray, xi: float, ax: int, sign: float) -> np.ndarray:
    x = np.moveaxis(x, ax, -1)
    out = x.copy()
    out[..., 1:] += sign * xi * x[..., :-1]
    out[..., :-1] += sign * xi * x[..., 1:]
    return np.moveaxis(out, -1, ax)


def apply_crosstalk(frame, xi: float, axis: str = "both") -> BitFrame:
    """Each pixel gains ``xi`` times each nearest neighbour along ``axis``."""
    if not 0 <= xi < 0.5:
        raise UsageError(f"crosstalk fraction must lie in [0, 0.5), got {xi}")
    x = _arr(frame)
    for ax in _axes(axis):
        x = _leak(x, xi, ax, +1.0)
    return BitFrame(x)


def apply_shot_noise(frame, n_p: float, rng: np.random.Generator) -> BitFrame:
    """Relative intensity -> Poisson photoelectron counts with mean intensity * n_p."""
    if not n_p > 0:
        raise UsageError(f"n_p must be > 0, got {n_p}")
    lam = np.clip(_arr(frame), 0.0, None) * n_p
    return BitFrame(rng.poisson(lam).astype(np.float64))


def apply_thermal_noise(frame, cfg: ChannelConfig, rng: np.random.Generator) -> BitFrame:
    x = _arr(frame)
    return BitFrame(x + rng.normal(0.0, cfg.sigma_j, size=x.shape))


def normalize_frame(frame, background, full_on) -> BitFrame:
    x, bg, fo = _arr(frame), _arr(background), _arr(full_on)
    span = fo - bg
    if not np.all(span > 0):
        bad = np.argwhere(~(span > 0))[0]
        raise CalibrationError(f"full-on frame must exceed background everywhere; fails at pixel {tuple(bad)}")
    return BitFrame((x - bg) / span)


def threshold_frame(frame, threshold: float) -> np.ndarray:
    """1 where intensity is strictly above ``threshold``; ties read as 0."""
    return (_arr(frame) > threshold).astype(np.uint8)


def correction_matrix(n: int, xi: float) -> np.ndarray:
    """Tridiagonal crosstalk-reduction matrix: 1 on the diagonal, -xi beside it."""
    return np.eye(n) - xi * (np.eye(n, k=1) + np.eye(n, k=-1))


def correct_crosstalk(frame, xi: float, axis: str = "both", renorm: str = "calibrated") -> BitFrame:
    """Multiply every line along ``axis`` by :func:`correction_matrix`, then renormalize.

    ``renorm="calibrated"`` divides by the corrected response of an all-ones
    frame, restoring '1' to ~1 regardless of neighbourhood.  ``"max"``
    divides each line by its maximum when that exceeds 0.5.  ``"none"``
    leaves the raw product.
    """
    if not 0 <= xi < 0.5:
        raise UsageError(f"crosstalk fraction must lie in [0, 0.5), got {xi}")
    x = _arr(frame)
    axes = _axes(axis)
    out = x
    for ax in axes:
        out = _leak(out, xi, ax, -1.0)
    if renorm == "calibrated":
        ref = np.ones_like(x)
        for ax in axes:
            ref = _leak(ref, xi, ax, -1.0)
        out = out / ref
    elif renorm == "max":
        ax = axes[-1]
        peak = np.max(out, axis=ax, keepdims=True)
        scale = np.where(peak > 0.5, peak, 1.0)
        out = out / scale
    elif renorm != "none":
        raise UsageError(f"renorm must be calibrated, max or none, got {renorm!r}")
    return BitFrame(out)


def alternating_frame(rows: int, cols: int, axis: str = "col", first: int = 1) -> np.ndarray:
    """Calibration pattern alternating 1,0,1,... along ``axis``, constant across it."""
    if axis not in _AXIS:
        raise UsageError(f"axis must be row or col, got {axis!r}")
    n = cols if axis == "row" else rows
    line = (np.arange(n) + (0 if first else 1)) % 2 == 0
    line = line.astype(np.float64)
    return np.tile(line, (rows, 1)) if axis == "row" else np.tile(line[:, None], (1, cols))


def estimate_xtalk(calib_frame, axis: str = "col") -> float:
    """Crosstalk fraction from a frame of an alternating 1/0 pattern along ``axis``.

    Uses interior positions only: xi = mean('0' level) / (2 * mean('1' level)).
    """
    if axis not in _AXIS:
        raise UsageError(f"axis must be row or col, got {axis!r}")
    x = np.moveaxis(_arr(calib_frame), _AXIS[axis], -1)
    if x.shape[-1] < 4:
        raise UsageError("calibration lines need at least 4 pixels along the pattern axis")
    interior = x[..., 1:-1]
    even, odd = interior[..., 0::2].mean(), interior[..., 1::2].mean()
    ones, zeros = max(even, odd), min(even, odd)
    if ones <= 0:
        raise UsageError("calibration frame has no '1' level; expected an alternating 1/0 pattern")
    xi = zeros / (2 * ones)
    # a non-alternating frame puts similar mass on both parities -> xi ~ 0.5
    if xi >= 0.45:
        raise UsageError(f"calibration frame does not look like an alternating 1/0 pattern (xi estimate {xi:.3f})")
    return float(xi)


@dataclass
class BerStats:
    ber_total: float
    ber_0: float
    ber_1: float
    errors_0: int
    errors_1: int
    n_0: int
    n_1: int
    error_map: np.ndarray

    @property
    def n_bits(self) -> int:
        return self.n_0 + self.n_1

    @property
    def errors(self) -> int:
        return self.errors_0 + self.errors_1

    def summary(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k != "error_map"}
        return {k: (float(v) if isinstance(v, float) else int(v)) for k, v in d.items()}


def measure_ber(sent, received) -> BerStats:
    s = np.asarray(sent).astype(bool)
    r = np.asarray(received).astype(bool)
    if s.shape != r.shape:
        raise UsageError(f"shape mismatch: sent {s.shape} vs received {r.shape}")
    err = s != r
    n1 = int(s.sum())
    n0 = int(s.size - n1)
    e1 = int((err & s).sum())
    e0 = int((err & ~s).sum())
    return BerStats(
        ber_total=(e0 + e1) / s.size if s.size else 0.0,
        ber_0=e0 / n0 if n0 else 0.0,
        ber_1=e1 / n1 if n1 else 0.0,
        errors_0=e0, errors_1=e1, n_0=n0, n_1=n1,
        error_map=err.astype(np.uint8),
    )


# --- full receive chain ---------------------------------------------------

def _optical(bits, cfg: ChannelConfig) -> np.ndarray:
    x = np.asarray(bits, dtype=np.float64)
    if cfg.enable_xtalk and cfg.xtalk_fraction > 0:
        x = apply_crosstalk(x, cfg.xtalk_fraction, cfg.xtalk_axes).intensities
    return x


def receive(bits, cfg: ChannelConfig, rng: np.random.Generator | None = None) -> BitFrame:
    """Send a binary frame; return the normalized (and optionally corrected) detector frame."""
    sent = np.asarray(bits)
    if sent.ndim != 2:
        raise UsageError(f"receive needs a 2-D bit frame, got shape {sent.shape}")
    if cfg.is_identity and not cfg.correct:
        return BitFrame(sent.astype(np.float64))
    if rng is None:
        rng = substream(cfg.seed)
    light = _optical(sent, cfg)
    if cfg.enable_shot:
        counts = apply_shot_noise(light, cfg.photons_per_bit, rng)
    else:
        counts = BitFrame(light * cfg.photons_per_bit)
    if cfg.enable_thermal:
        counts = apply_thermal_noise(counts, cfg, rng)
    # calibration curves are the expected dark and all-on frames
    full_on = _optical(np.ones(sent.shape), cfg) * cfg.photons_per_bit
    frame = normalize_frame(counts, np.zeros(sent.shape), full_on)
    if cfg.correct and cfg.enable_xtalk and cfg.xtalk_fraction > 0:
        frame = correct_crosstalk(frame, cfg.xtalk_fraction, cfg.xtalk_axes, cfg.renorm)
    return frame


def transmit(bits, cfg: ChannelConfig, rng: np.random.Generator | None = None) -> np.ndarray:
    """Send a binary frame through the channel and return the received bits."""
    return threshold_frame(receive(bits, cfg, rng), cfg.threshold_fraction)


def simulate_bit_errors(cfg: ChannelConfig, n_trials: int, width: int = 1000, chunk: int = 2_000_000) -> dict:
    """Monte-Carlo BER of isolated bits: ``n_trials`` '0's and ``n_trials`` '1's.

    Crosstalk is switched off so every pixel is an independent trial.
    """
    cfg = cfg.with_(enable_xtalk=False, correct=False)
    counts = {"errors_0": 0, "n_0": 0, "errors_1": 0, "n_1": 0}
    done = 0
    block = 0
    while done < n_trials:
        n = min(chunk, n_trials - done)
        rows = -(-n // width)
        for value in (0, 1):
            sent = np.full((rows, width), value, dtype=np.uint8)
            got = transmit(sent, cfg, substream(cfg.seed, 7, block, value)).ravel()[:n]
            counts[f"errors_{value}"] += int(np.count_nonzero(got != value))
            counts[f"n_{value}"] += n
        done += n
        block += 1
    counts["ber_0"] = counts["errors_0"] / counts["n_0"]
    counts["ber_1"] = counts["errors_1"] / counts["n_1"]
    return counts


def correction_experiment(cfg: ChannelConfig, rows: int = 500, cols: int = 500, n_frames: int = 4) -> dict:
    """BER of random 2-D bit frames with and without crosstalk correction.

    When the corrected run has no errors the improvement factor is a lower
    bound computed as if one error had occurred.
    """
    tot = {"plain": [0, 0], "corrected": [0, 0]}
    maps = {}
    for i in range(n_frames):
        bits = substream(cfg.seed, 11, i).integers(0, 2, size=(rows, cols), dtype=np.uint8)
        for name, correct in (("plain", False), ("corrected", True)):
            got = transmit(bits, cfg.with_(correct=correct), substream(cfg.seed, 12, i))
            st = measure_ber(bits, got)
            tot[name][0] += st.errors
            tot[name][1] += st.n_bits
            if i == 0:
                maps[name] = st.error_map
    ber_plain = tot["plain"][0] / tot["plain"][1]
    ber_corr = tot["corrected"][0] / tot["corrected"][1]
    floor = 1 / tot["corrected"][1]
    return {
        "n_bits": tot["plain"][1],
        "errors_plain": tot["plain"][0],
        "errors_corrected": tot["corrected"][0],
        "ber_plain": ber_plain,
        "ber_corrected": ber_corr,
        "improvement": ber_plain / max(ber_corr, floor),
        "improvement_is_lower_bound": tot["corrected"][0] == 0,
        "error_maps": maps,
    }


# --- frame I/O ------------------------------------------------------------

def write_frame(frame, path) -> None:
    """Binary frame: 8-byte magic, uint32 rows, uint32 cols (little-endian), float64 data."""
    x = np.ascontiguousarray(_arr(frame), dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(FRAME_MAGIC + struct.pack("<II", *x.shape))
        fh.write(x.tobytes())


def read_frame(path) -> BitFrame:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:8] != FRAME_MAGIC:
        raise UsageError(f"{path}: not a frame file (bad magic)")
    rows, cols = struct.unpack("<II", raw[8:16])
    expected = 16 + 8 * rows * cols
    if len(raw) != expected:
        raise UsageError(f"{path}: expected {expected} bytes for a {rows}x{cols} frame, got {len(raw)}")
    return BitFrame(np.frombuffer(raw, dtype="<f8", offset=16).reshape(rows, cols).astype(np.float64))


def write_frame_csv(frame, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in _arr(frame):
            w.writerow([repr(float(v)) for v in row])


def write_pgm(error_map, path) -> None:
    """Binary PGM: errors black, correct bits white."""
    m = np.asarray(error_map)
    img = np.where(m != 0, 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        fh.write(img.tobytes())
