"""Closed-form bit error rates of a receiverless photodetector.

A '1' delivers Poisson(n_p) photoelectrons; every pixel carries Gaussian
kT/C noise with sigma_J = sqrt(k_B T C) / e electrons.  A pixel reads '1'
when its charge reaches the threshold q_D (n_p / 2 by default).

Tails at n_p = 1000 sit near 1e-69, so everything is evaluated as log
probabilities and exponentiated at the end; ``log10_*`` variants return the
exponent directly for values that underflow a double.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from scipy.constants import Boltzmann as K_B, e as ELEMENTARY_CHARGE
from scipy.special import log_ndtr, logsumexp

from . import ConfigError

LN10 = math.log(10.0)
# relative cut-off for convolution terms
TRUNCATION = 1e-30


@dataclass(frozen=True)
class BerConfig:
    n_p: float
    temperature_k: float = 300.0
    c_total: float = 0.2e-15
    q_threshold: float | None = None

    def __post_init__(self):
        if not self.n_p >= 1:
            raise ConfigError(f"BerConfig.n_p must be >= 1, got {self.n_p!r}")
        if not self.temperature_k > 0:
            raise ConfigError(f"BerConfig.temperature_k must be > 0, got {self.temperature_k!r}")
        if not self.c_total > 0:
            raise ConfigError(f"BerConfig.c_total must be > 0, got {self.c_total!r}")
        if self.q_threshold is not None and not 0 <= self.q_threshold <= self.n_p:
            raise ConfigError(f"BerConfig.q_threshold must lie in [0, n_p], got {self.q_threshold!r}")

    @property
    def q_d(self) -> float:
        return self.n_p / 2 if self.q_threshold is None else self.q_threshold

    @property
    def q_d_int(self) -> int:
        # half-to-even, like the quantizer
        return int(round(self.q_d))


def sigma_thermal_electrons(cfg: BerConfig) -> float:
    return math.sqrt(K_B * cfg.temperature_k * cfg.c_total) / ELEMENTARY_CHARGE


def log_ber0(cfg: BerConfig) -> float:
    """Natural log of P(N(0, sigma_J) > q_D) = erfc(q_D / (sqrt(2) sigma_J)) / 2."""
    return float(log_ndtr(-cfg.q_d / sigma_thermal_electrons(cfg)))


def ber0(cfg: BerConfig) -> float:
    return math.exp(log_ber0(cfg))


def log10_ber0(cfg: BerConfig) -> float:
    return log_ber0(cfg) / LN10


def log_poisson_pmf(q, n_p: float) -> np.ndarray:
    """ln p(q) = -n_p + q ln n_p - sum_{m<=q} ln m, for integer q >= 0."""
    q = np.asarray(q, dtype=np.int64)
    top = int(q.max()) if q.size else 0
    log_fact = np.concatenate(([0.0], np.cumsum(np.log(np.arange(1, top + 1, dtype=np.float64)))))
    return -n_p + q * math.log(n_p) - log_fact[q]


def log_ber1_shot(cfg: BerConfig) -> float:
    q = np.arange(1, cfg.q_d_int)
    if q.size == 0:
        return -math.inf
    return float(logsumexp(log_poisson_pmf(q, cfg.n_p)))


def ber1_shot(cfg: BerConfig) -> float:
    return math.exp(log_ber1_shot(cfg))


def log10_ber1_shot(cfg: BerConfig) -> float:
    return log_ber1_shot(cfg) / LN10


def _log_gauss_bin(d: np.ndarray, sigma: float) -> np.ndarray:
    """ln(Phi((d + 1/2)/sigma) - Phi((d - 1/2)/sigma)), stable in both tails."""
    a = np.abs(d)  # symmetric; work in the upper tail
    lo = log_ndtr(-(a - 0.5) / sigma)  # ln Q((|d| - 1/2) / sigma)
    hi = log_ndtr(-(a + 0.5) / sigma)
    with np.errstate(divide="ignore"):
        return lo + np.log1p(-np.exp(hi - lo))


def _poisson_support(cfg: BerConfig, sigma: float) -> np.ndarray:
    k_max = math.ceil(cfg.n_p + 12 * math.sqrt(cfg.n_p) + 12 * sigma + 10)
    return np.arange(0, k_max + 1)


def log_ber1_total(cfg: BerConfig, block: int = 256) -> float:
    """ln of sum_{q=1}^{q_D-1} (Poisson * discretized Gaussian)(q)."""
    sigma = sigma_thermal_electrons(cfg)
    q_all = np.arange(1, cfg.q_d_int)
    if q_all.size == 0:
        return -math.inf
    k = _poisson_support(cfg, sigma)
    lp = log_poisson_pmf(k, cfg.n_p)
    cut = math.log(TRUNCATION)
    per_q = []
    for start in range(0, q_all.size, block):
        q = q_all[start:start + block]
        terms = lp[None, :] + _log_gauss_bin(q[:, None] - k[None, :], sigma)
        peak = terms.max(axis=1, keepdims=True)
        terms = np.where(terms >= peak + cut, terms, -np.inf)
        per_q.append(logsumexp(terms, axis=1))
    return float(logsumexp(np.concatenate(per_q)))


def ber1_total(cfg: BerConfig) -> float:
    return math.exp(log_ber1_total(cfg))


def log10_ber1_total(cfg: BerConfig) -> float:
    return log_ber1_total(cfg) / LN10


def log_ber1_exact(cfg: BerConfig) -> float:
    """ln P(Poisson(n_p) + N(0, sigma_J) <= q_D) with a continuous Gaussian.

    Unlike :func:`ber1_total` this keeps the q <= 0 mass and does not
    discretize the Gaussian, so it is the exact error probability of a
    threshold detector that reads '1' only for charge strictly above q_D.
    """
    sigma = sigma_thermal_electrons(cfg)
    k = _poisson_support(cfg, sigma)
    return float(logsumexp(log_poisson_pmf(k, cfg.n_p) + log_ndtr((cfg.q_d - k) / sigma)))


def ber1_exact(cfg: BerConfig) -> float:
    return math.exp(log_ber1_exact(cfg))


class BerRow(NamedTuple):
    n_p: float
    log10_ber0_min: float
    log10_ber0_max: float
    log10_ber1_shot: float
    log10_ber1_total_min: float
    log10_ber1_total_max: float


def ber_table(n_p_list: Sequence[float], t_list: Sequence[float], cfg_base: BerConfig | None = None) -> list[BerRow]:
    """Rows of log10 BER values; min/max span the temperature list."""
    if not n_p_list or not t_list:
        raise ConfigError("ber_table needs non-empty n_p and temperature lists")
    base = cfg_base or BerConfig(n_p=1)
    rows = []
    for n_p in n_p_list:
        cfgs = [BerConfig(n_p=n_p, temperature_k=t, c_total=base.c_total) for t in t_list]
        b0 = [log10_ber0(c) for c in cfgs]
        bt = [log10_ber1_total(c) for c in cfgs]
        rows.append(BerRow(n_p, min(b0), max(b0), log10_ber1_shot(cfgs[0]), min(bt), max(bt)))
    return rows


def decade(log10_value: float) -> int:
    """Exponent of the value in scientific notation (floor of log10)."""
    return math.floor(log10_value)


def _fmt_range(lo: float, hi: float) -> str:
    a, b = decade(lo), decade(hi)
    return f"10^{a}" if a == b else f"10^{a} - 10^{b}"


def format_table(rows: list[BerRow]) -> str:
    header = ("n_p", "BER0", "BER1_shot", "BER1_total")
    body = [
        (f"{r.n_p:g}", _fmt_range(r.log10_ber0_min, r.log10_ber0_max), f"10^{decade(r.log10_ber1_shot)}",
         _fmt_range(r.log10_ber1_total_min, r.log10_ber1_total_max))
        for r in rows
    ]
    widths = [max(len(x[i]) for x in [header, *body]) for i in range(4)]
    lines = [" | ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines.append("-+-".join("-" * w for w in widths))
    lines += [" | ".join(c.ljust(w) for c, w in zip(row, widths)) for row in body]
    return "\n".join(lines)


def write_table_csv(rows: list[BerRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(BerRow._fields)
        for r in rows:
            w.writerow([repr(float(v)) for v in r])
