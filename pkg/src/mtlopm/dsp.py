"""Receiver DSP: DC removal, resampling to 2 sps, blind CMA, normalization."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numba
import numpy as np
from scipy import signal

from .errors import Diverged, UnsupportedRatio, ZeroSignal
from .sigsim import ModulationFormat, WaveformFrame

TAPS_PER_BRANCH = 64
DIVERGENCE_LIMIT = 1e6
KAISER_BETA = 8.0


@dataclass
class EqualizerConfig:
    n_taps: int = 11
    step_size: float = 1e-3
    n_passes: int = 3
    update_stride: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.n_taps < 3 or self.n_taps % 2 == 0:
            raise ValueError(f"n_taps must be odd and >= 3, got {self.n_taps}")
        # step_size 0 is accepted: it freezes the centre-spike filter.
        if not 0.0 <= self.step_size <= 0.1:
            raise ValueError(f"step_size must lie in [0, 0.1], got {self.step_size}")
        if self.n_passes < 1:
            raise ValueError("n_passes must be >= 1")
        if self.update_stride not in (1, 2):
            raise ValueError("update_stride must be 1 (every sample) or 2 (once per symbol)")


@dataclass
class EqualizedFrame:
    amplitudes: np.ndarray
    truth_format: ModulationFormat
    truth_osnr_db: float
    final_cm_cost: float
    taps: np.ndarray | None = None
    modulus: float = math.nan


def remove_dc(frame: WaveformFrame) -> WaveformFrame:
    x = frame.samples
    if x.size == 0:
        raise ValueError("frame is empty")
    return frame.with_samples(x - x.mean())


def resampling_filter(up: int, down: int) -> np.ndarray:
    """Kaiser-windowed sinc with ``TAPS_PER_BRANCH`` taps per polyphase branch.

    Odd length keeps the group delay an integer number of samples. Cutoff is
    the lower of the input and output Nyquist rates.
    """
    n = TAPS_PER_BRANCH * up + 1
    return signal.firwin(n, 1.0 / max(up, down), window=("kaiser", KAISER_BETA))


def resample_to_2sps(frame: WaveformFrame) -> WaveformFrame:
    ratio = Fraction(frame.sps)
    if ratio < 2:
        raise UnsupportedRatio(f"cannot resample {ratio} sps to 2 sps")
    if ratio == 2:
        return frame.with_samples(frame.samples.copy())
    factor = Fraction(2) / ratio
    up, down = factor.numerator, factor.denominator
    y = signal.resample_poly(frame.samples, up, down, window=resampling_filter(up, down))
    return frame.with_samples(y, sps=Fraction(2))


@numba.njit(cache=True)
def _cma_kernel(x, taps, mu, r2, n_passes, limit, ustride):
    n_taps = taps.size
    n_win = x.size - n_taps + 1
    out = np.empty(n_win)
    for p in range(n_passes):
        final = p == n_passes - 1
        stride = 1 if final else ustride
        for k in range(0, n_win, stride):
            y = 0.0
            for i in range(n_taps):
                y += taps[i] * x[k + i]
            if final:
                out[k] = y
            if k % ustride == 0:
                g = mu * y * (y * y - r2)
                for i in range(n_taps):
                    taps[i] -= g * x[k + i]
                    if not abs(taps[i]) <= limit:
                        return out, False
    return out, True


def cm_cost(y: np.ndarray, modulus: float) -> float:
    """Mean constant-modulus dispersion, mean((y^2 - R2)^2)."""
    return float(np.mean((y * y - modulus) ** 2))


def cma_modulus(x: np.ndarray) -> float:
    """Blind dispersion constant R2 = E[x^4] / E[x^2] of the DC-removed input."""
    xc = x - x.mean()
    p2 = float(np.mean(xc**2))
    if p2 == 0.0:
        raise ZeroSignal("CMA input has zero power")
    return float(np.mean(xc**4)) / p2


def cma_equalize(frame: WaveformFrame, cfg: EqualizerConfig | None = None) -> EqualizedFrame:
    """Blind T/2-spaced real CMA.

    Taps start as a centre spike. With ``update_stride=2`` they adapt once
    per symbol; the default ``update_stride=1`` adapts on both half-symbol
    phases, which are the phases that later feed the histogram. The last of
    ``n_passes`` passes emits an output at every sample position and
    ``n_taps - 1`` edge samples are dropped.

    The loop runs on a unit-power copy of the input so ``step_size`` does
    not depend on the received signal scale; outputs, modulus and cost are
    reported in the input's units.
    """
    cfg = cfg or EqualizerConfig()
    if Fraction(frame.sps) != 2:
        raise UnsupportedRatio(f"CMA expects 2 samples/symbol, got {frame.sps}")
    x = np.ascontiguousarray(frame.samples, dtype=float)
    if x.size <= 10 * cfg.n_taps:
        raise ValueError(f"frame too short for {cfg.n_taps}-tap CMA ({x.size} samples)")
    r2 = cma_modulus(x)
    scale = math.sqrt(float(np.mean((x - x.mean()) ** 2)))
    taps = np.zeros(cfg.n_taps)
    taps[cfg.n_taps // 2] = 1.0
    y, ok = _cma_kernel(
        x / scale, taps, cfg.step_size, r2 / scale**2, cfg.n_passes, DIVERGENCE_LIMIT, cfg.update_stride
    )
    if not ok:
        raise Diverged(f"CMA taps exceeded {DIVERGENCE_LIMIT:g}; reduce step_size ({cfg.step_size:g})")
    y = y * scale
    return EqualizedFrame(
        amplitudes=np.abs(y),
        truth_format=frame.truth_format,
        truth_osnr_db=frame.truth_osnr_db,
        final_cm_cost=cm_cost(y, r2),
        taps=taps,
        modulus=r2,
    )


def unequalized_cm_cost(frame: WaveformFrame, n_taps: int = 11) -> float:
    """CM cost of the centre-spike filter (no adaptation), same trimming and R2."""
    x = np.asarray(frame.samples, dtype=float)
    c = n_taps // 2
    return cm_cost(x[c : x.size - c], cma_modulus(x))


def normalize_amplitude(eq: EqualizedFrame, percentile: float = 99.9) -> EqualizedFrame:
    """Scale by the given percentile and clip to [0, 1]."""
    a = np.asarray(eq.amplitudes, dtype=float)
    if a.size == 0:
        raise ValueError("no amplitudes to normalize")
    # "higher" picks an actual sample, which then maps exactly to 1 (idempotent)
    ref = float(np.percentile(a, percentile, method="higher"))
    if ref == 0.0:
        raise ZeroSignal(f"{percentile}th-percentile amplitude is zero")
    return EqualizedFrame(
        amplitudes=np.clip(a / ref, 0.0, 1.0),
        truth_format=eq.truth_format,
        truth_osnr_db=eq.truth_osnr_db,
        final_cm_cost=eq.final_cm_cost,
        taps=eq.taps,
        modulus=eq.modulus,
    )


def receive(frame: WaveformFrame, cfg: EqualizerConfig | None = None) -> EqualizedFrame:
    """Full receiver chain: DC removal, 2 sps, CMA, normalization."""
    eq = cma_equalize(resample_to_2sps(remove_dc(frame)), cfg)
    return normalize_amplitude(eq)
