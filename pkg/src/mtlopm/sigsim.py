"""IM/DD PAM waveform simulation.

Stand-in for the transmitter, fiber and noise-loading hardware: seeded
uniform symbol draws, rectangular NRZ pulses (sample-and-hold), a short
real FIR channel for inter-symbol interference and white Gaussian noise
calibrated to a requested OSNR.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from fractions import Fraction

import numpy as np

from .errors import ZeroSignal
from .rng import stream


class ModulationFormat(enum.Enum):
    OOK = "OOK"
    PAM4 = "PAM4"
    PAM8 = "PAM8"

    def levels(self) -> int:
        return {"OOK": 2, "PAM4": 4, "PAM8": 8}[self.value]

    def alphabet(self) -> np.ndarray:
        """Equally spaced amplitudes from 0 to 1."""
        m = self.levels()
        return np.arange(m, dtype=float) / (m - 1)

    @property
    def index(self) -> int:
        return FORMATS.index(self)

    @classmethod
    def parse(cls, name: "str | ModulationFormat") -> "ModulationFormat":
        if isinstance(name, cls):
            return name
        key = str(name).strip().upper()
        if key in ("NRZ", "NRZ-OOK", "PAM2"):
            key = "OOK"
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown modulation format {name!r}") from None


# Class index order used for one-hot targets.
FORMATS = (ModulationFormat.OOK, ModulationFormat.PAM4, ModulationFormat.PAM8)


@dataclass
class SimConfig:
    symbol_rate: float = 2.0e10
    n_symbols: int = 8191
    gen_samples_per_symbol: int = 5
    channel_taps: tuple = (0.12, 1.0, 0.12)
    osnr_db: float = math.inf
    ref_bandwidth: float = 1.25e10
    dac_bits: int | None = None
    seed: int = 0

    def __post_init__(self):
        self.channel_taps = tuple(float(t) for t in self.channel_taps)
        self.validate()

    def validate(self):
        if self.n_symbols < 64:
            raise ValueError(f"n_symbols must be >= 64, got {self.n_symbols}")
        if self.gen_samples_per_symbol < 2:
            raise ValueError("gen_samples_per_symbol must be >= 2")
        if not self.channel_taps:
            raise ValueError("channel_taps must be nonempty")
        mags = np.abs(np.asarray(self.channel_taps))
        if np.count_nonzero(mags == mags.max()) != 1 or mags.max() == 0:
            raise ValueError("channel_taps need a strict maximum-magnitude tap")
        if not self.ref_bandwidth > 0:
            raise ValueError("ref_bandwidth must be > 0")
        if math.isnan(self.osnr_db) or self.osnr_db == -math.inf:
            raise ValueError("osnr_db must be finite (or +inf for noiseless)")
        if self.symbol_rate <= 0:
            raise ValueError("symbol_rate must be > 0")
        if self.dac_bits is not None and not 2 <= self.dac_bits <= 16:
            raise ValueError("dac_bits must lie in [2, 16]")

    def normalized_taps(self) -> np.ndarray:
        taps = np.asarray(self.channel_taps, dtype=float)
        return taps / np.abs(taps).max()


@dataclass
class WaveformFrame:
    """Real sampled waveform plus rate metadata and ground truth.

    ``sps`` is the exact samples-per-symbol ratio; ``sample_rate`` is
    derived from it so rate bookkeeping never goes through floats.
    """

    samples: np.ndarray
    symbol_rate: float
    sps: Fraction
    truth_format: ModulationFormat
    truth_osnr_db: float = math.inf

    @property
    def sample_rate(self) -> float:
        return self.symbol_rate * float(self.sps)

    def with_samples(self, samples: np.ndarray, **changes) -> "WaveformFrame":
        return replace(self, samples=samples, **changes)


def generate_symbols(fmt: ModulationFormat, n: int, seed: int) -> np.ndarray:
    """Draw ``n`` i.i.d. symbols uniformly from the format's alphabet."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, fmt.levels(), size=n)
    return fmt.alphabet()[idx]


def modulate(symbols, cfg: SimConfig, fmt: ModulationFormat) -> WaveformFrame:
    """Rectangular NRZ pulse shaping by sample-and-hold (no channel yet)."""
    symbols = np.asarray(symbols, dtype=float)
    if symbols.size == 0:
        raise ValueError("symbols must be nonempty")
    sps = cfg.gen_samples_per_symbol
    return WaveformFrame(
        samples=np.repeat(symbols, sps),
        symbol_rate=cfg.symbol_rate,
        sps=Fraction(sps),
        truth_format=fmt,
    )


def apply_channel(frame: WaveformFrame, taps) -> WaveformFrame:
    """Causal FIR filtering, truncated to the input length."""
    taps = np.asarray(taps, dtype=float)
    if taps.size == 0:
        raise ValueError("taps must be nonempty")
    out = np.convolve(frame.samples, taps)[: frame.samples.size]
    return frame.with_samples(out)


def noise_variance(signal_power: float, osnr_db: float, ref_bandwidth: float, symbol_rate: float) -> float:
    """Electrical noise variance that realises ``osnr_db``.

    sigma^2 = P / (OSNR_lin * B_ref / R_s), with P the AC signal power.
    """
    if math.isinf(osnr_db) and osnr_db > 0:
        return 0.0
    return signal_power / (10.0 ** (osnr_db / 10.0) * ref_bandwidth / symbol_rate)


def load_noise(frame: WaveformFrame, osnr_db: float, ref_bandwidth: float, seed: int) -> WaveformFrame:
    """Add white Gaussian noise so the frame sits at ``osnr_db``.

    ``osnr_db = +inf`` is the noiseless sentinel and returns the samples
    unchanged.
    """
    x = frame.samples
    if math.isinf(osnr_db) and osnr_db > 0:
        return frame.with_samples(x.copy(), truth_osnr_db=osnr_db)
    p_sig = float(np.mean((x - x.mean()) ** 2))
    if p_sig == 0.0:
        raise ZeroSignal("cannot load noise onto a frame with zero AC power")
    var = noise_variance(p_sig, osnr_db, ref_bandwidth, frame.symbol_rate)
    rng = np.random.default_rng(seed)
    noisy = x + rng.normal(0.0, math.sqrt(var), size=x.size)
    return frame.with_samples(noisy, truth_osnr_db=float(osnr_db))


def quantize(frame: WaveformFrame, bits: int) -> WaveformFrame:
    """Uniform quantizer with 2**bits levels spanning the frame's range."""
    if not 2 <= bits <= 16:
        raise ValueError("bits must lie in [2, 16]")
    x = frame.samples
    lo, hi = float(x.min()), float(x.max())
    if hi == lo:
        return frame.with_samples(x.copy())
    step = (hi - lo) / (2**bits - 1)
    q = lo + np.round((x - lo) / step) * step
    return frame.with_samples(np.clip(q, lo, hi))


def simulate_frame(fmt: ModulationFormat, cfg: SimConfig) -> WaveformFrame:
    """Symbols -> NRZ -> optional DAC quantization -> channel -> noise.

    Symbol and noise draws use separate streams derived from ``cfg.seed``.
    """
    sym_seed = int(stream(cfg.seed, 0).integers(2**63))
    noise_seed = int(stream(cfg.seed, 1).integers(2**63))
    frame = modulate(generate_symbols(fmt, cfg.n_symbols, sym_seed), cfg, fmt)
    if cfg.dac_bits is not None:
        frame = quantize(frame, cfg.dac_bits)
    frame = apply_channel(frame, cfg.normalized_taps())
    return load_noise(frame, cfg.osnr_db, cfg.ref_bandwidth, noise_seed)
