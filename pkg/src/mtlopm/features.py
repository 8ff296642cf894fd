"""Amplitude-histogram features and the labeled dataset.

The dataset is built by running every (format, OSNR, frame index) tuple
through simulation and the receiver chain, histogramming the normalized
amplitudes and attaching one-hot format and min-max OSNR targets.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .dsp import EqualizerConfig, receive
from .errors import FileFormatError, FrameError, OutOfGrid
from .rng import derive_seed
from .sigsim import FORMATS, ModulationFormat, SimConfig, simulate_frame

PARTITIONS = ("train", "val", "test")
UNASSIGNED = "unassigned"
FIXED_COLUMNS = ("format", "osnr_db", "frame_index", "partition")


@dataclass
class AmplitudeHistogram:
    counts: np.ndarray

    @property
    def bin_count(self) -> int:
        return int(self.counts.size)

    def relative(self) -> np.ndarray:
        return self.counts / self.counts.sum()


def compute_histogram(amplitudes, bin_count: int) -> AmplitudeHistogram:
    """Histogram over [0, 1]; bin i is [i/B, (i+1)/B), the last bin closed."""
    if bin_count < 2:
        raise ValueError("bin_count must be >= 2")
    a = np.asarray(amplitudes, dtype=float)
    if a.size and (a.min() < 0.0 or a.max() > 1.0):
        raise ValueError("amplitudes must lie in [0, 1]")
    # np.histogram's bin edges come from linspace, which can misplace values
    # that sit exactly on i/B; index arithmetic keeps the stated rule.
    idx = np.minimum(np.floor(a * bin_count).astype(np.int64), bin_count - 1)
    return AmplitudeHistogram(np.bincount(idx, minlength=bin_count).astype(np.int64))


def _grid_bounds(grid) -> tuple[float, float]:
    return float(min(grid)), float(max(grid))


def encode_targets(fmt, osnr_db: float, grid) -> tuple[np.ndarray, float]:
    """One-hot over (OOK, PAM4, PAM8) and the min-max normalized OSNR.

    A single-point grid maps its only OSNR to 0.
    """
    fmt = ModulationFormat.parse(fmt)
    lo, hi = _grid_bounds(grid)
    if not lo <= osnr_db <= hi:
        raise OutOfGrid(f"OSNR {osnr_db} dB outside grid [{lo}, {hi}]")
    onehot = np.zeros(len(FORMATS))
    onehot[fmt.index] = 1.0
    norm = 0.0 if hi == lo else (osnr_db - lo) / (hi - lo)
    return onehot, norm


def decode_osnr(osnr_norm, grid):
    lo, hi = _grid_bounds(grid)
    return lo + np.asarray(osnr_norm) * (hi - lo)


@dataclass
class LabeledExample:
    features: np.ndarray
    format_onehot: np.ndarray
    osnr_norm: float
    osnr_db: float
    fmt: ModulationFormat
    frame_index: int = 0


@dataclass
class DatasetSpec:
    osnr_grid: tuple = tuple(float(v) for v in range(32, 46))
    formats: tuple = ("OOK", "PAM4", "PAM8")
    frames_per_point: int = 10
    bin_count: int = 100
    test_frac: float = 0.05
    val_frac: float = 0.10
    seed: int = 0
    stratified: bool = False
    relative_frequency: bool = True

    def __post_init__(self):
        self.osnr_grid = tuple(float(v) for v in self.osnr_grid)
        self.formats = tuple(ModulationFormat.parse(f).value for f in self.formats)
        self.validate()

    def validate(self):
        g = self.osnr_grid
        if not g:
            raise ValueError("osnr_grid must be nonempty")
        if any(b <= a for a, b in zip(g, g[1:])):
            raise ValueError("osnr_grid must be strictly increasing")
        if not all(math.isfinite(v) for v in g):
            raise ValueError("osnr_grid values must be finite")
        if not self.formats or len(set(self.formats)) != len(self.formats):
            raise ValueError("formats must be nonempty and distinct")
        if self.frames_per_point < 1:
            raise ValueError("frames_per_point must be >= 1")
        if self.bin_count < 2:
            raise ValueError("bin_count must be >= 2")
        if not (0.0 <= self.test_frac < 1.0 and 0.0 <= self.val_frac < 1.0):
            raise ValueError("test_frac and val_frac must lie in [0, 1)")

    @property
    def train_frac(self) -> float:
        return 1.0 - self.test_frac

    def format_list(self) -> list[ModulationFormat]:
        return [ModulationFormat.parse(f) for f in self.formats]

    def size(self) -> int:
        return len(self.osnr_grid) * len(self.formats) * self.frames_per_point


@dataclass
class Dataset:
    examples: list
    spec: DatasetSpec
    partition: list = field(default_factory=list)
    pipeline_config: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.partition:
            self.partition = [UNASSIGNED] * len(self.examples)
        if len(self.partition) != len(self.examples):
            raise ValueError("partition length must match examples")

    def __len__(self):
        return len(self.examples)

    @property
    def bin_count(self) -> int:
        return self.spec.bin_count

    def indices(self, part: str | None = None) -> np.ndarray:
        if part is None:
            return np.arange(len(self.examples))
        return np.array([i for i, p in enumerate(self.partition) if p == part], dtype=np.int64)

    def counts(self) -> dict:
        return {p: self.partition.count(p) for p in PARTITIONS}

    def arrays(self, part: str | None = None):
        """(features, one-hot, osnr_norm, osnr_db) stacked for one partition."""
        idx = self.indices(part)
        ex = [self.examples[i] for i in idx]
        b = self.bin_count
        if not ex:
            return np.zeros((0, b)), np.zeros((0, len(FORMATS))), np.zeros(0), np.zeros(0)
        return (
            np.stack([e.features for e in ex]),
            np.stack([e.format_onehot for e in ex]),
            np.array([e.osnr_norm for e in ex]),
            np.array([e.osnr_db for e in ex]),
        )


def make_example(amplitudes, fmt, osnr_db, frame_index, spec: DatasetSpec) -> LabeledExample:
    hist = compute_histogram(amplitudes, spec.bin_count)
    feats = hist.relative() if spec.relative_frequency else hist.counts.astype(float)
    onehot, norm = encode_targets(fmt, osnr_db, spec.osnr_grid)
    return LabeledExample(feats, onehot, norm, float(osnr_db), ModulationFormat.parse(fmt), frame_index)


@dataclass
class FrameBank:
    """Equalized, normalized amplitude frames kept for re-histogramming.

    Sweeps over the bin count reuse one bank so only the feature
    resolution changes between cells.
    """

    spec: DatasetSpec
    keys: list  # (format, osnr_db, frame_index), canonical order
    amplitudes: list
    pipeline_config: dict

    def dataset(self, bin_count: int | None = None, relative_frequency: bool | None = None) -> Dataset:
        spec = self.spec
        changes = {}
        if bin_count is not None:
            changes["bin_count"] = int(bin_count)
        if relative_frequency is not None:
            changes["relative_frequency"] = relative_frequency
        if changes:
            spec = DatasetSpec(**{**asdict(spec), **changes})
        examples = [make_example(a, f, o, i, spec) for (f, o, i), a in zip(self.keys, self.amplitudes)]
        return Dataset(examples, spec, pipeline_config=dict(self.pipeline_config))


def frame_tuples(spec: DatasetSpec):
    """Canonical order: format-major, then OSNR, then frame index."""
    for fmt in spec.format_list():
        for oi, osnr in enumerate(spec.osnr_grid):
            for k in range(spec.frames_per_point):
                yield fmt, oi, osnr, k


def _run_tuple(args):
    fmt, oi, osnr, k, master, sim, eq = args
    seed = derive_seed(master, fmt.index, oi, k)
    cfg = SimConfig(**{**asdict(sim), "osnr_db": osnr, "seed": seed})
    try:
        return receive(simulate_frame(fmt, cfg), eq).amplitudes
    except Exception as exc:
        raise FrameError(fmt.value, osnr, k, exc) from exc


def pipeline_config(sim: SimConfig, eq: EqualizerConfig) -> dict:
    s = asdict(sim)
    s.pop("osnr_db")
    s.pop("seed")
    # JSON round trip so in-memory and loaded configs compare equal (tuples become lists)
    return json.loads(json.dumps({"sim": s, "equalizer": asdict(eq)}))


def build_frame_bank(spec: DatasetSpec, sim: SimConfig | None = None, eq: EqualizerConfig | None = None,
                     jobs: int = 1) -> FrameBank:
    sim = sim or SimConfig()
    eq = eq or EqualizerConfig()
    work = [(f, oi, o, k, spec.seed, sim, eq) for f, oi, o, k in frame_tuples(spec)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            amps = list(pool.map(_run_tuple, work, chunksize=8))
    else:
        amps = [_run_tuple(w) for w in work]
    keys = [(f.value, o, k) for f, _, o, k in frame_tuples(spec)]
    return FrameBank(spec, keys, amps, pipeline_config(sim, eq))


def build_dataset(spec: DatasetSpec, sim: SimConfig | None = None, eq: EqualizerConfig | None = None,
                  jobs: int = 1) -> Dataset:
    """Simulate, equalize and histogram every tuple of ``spec`` (unpartitioned)."""
    return build_frame_bank(spec, sim, eq, jobs).dataset()


def _floor_frac(frac: float, n: int) -> int:
    # Fraction(str(.)) avoids 0.05 * 420 landing just below 21 in binary.
    return math.floor(Fraction(str(frac)) * n)


def split_sizes(n: int, test_frac: float = 0.05, val_frac: float = 0.10) -> tuple[int, int, int]:
    """(train, val, test) sizes by the floor rule."""
    n_test = _floor_frac(test_frac, n)
    n_val = _floor_frac(val_frac, n - n_test)
    return n - n_test - n_val, n_val, n_test


def _assign(tags, idx, rng, spec):
    perm = idx[rng.permutation(idx.size)]
    _, n_val, n_test = split_sizes(idx.size, spec.test_frac, spec.val_frac)
    for j, i in enumerate(perm):
        tags[i] = "test" if j < n_test else "val" if j < n_test + n_val else "train"


def split_dataset(ds: Dataset, seed: int | None = None, stratified: bool | None = None) -> Dataset:
    """Tag examples train/val/test from one seeded permutation.

    test = floor(test_frac * N), val = floor(val_frac * (N - test)), the
    rest train. ``stratified`` applies the same rule within each format.
    """
    seed = ds.spec.seed if seed is None else seed
    stratified = ds.spec.stratified if stratified is None else stratified
    rng = np.random.default_rng(derive_seed(seed, 0x5_9117))
    tags = [UNASSIGNED] * len(ds)
    if stratified:
        by_fmt = {}
        for i, e in enumerate(ds.examples):
            by_fmt.setdefault(e.fmt.index, []).append(i)
        for key in sorted(by_fmt):
            _assign(tags, np.array(by_fmt[key]), rng, ds.spec)
    else:
        _assign(tags, np.arange(len(ds)), rng, ds.spec)
    return Dataset(ds.examples, ds.spec, tags, ds.pipeline_config)


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def metadata(ds: Dataset) -> dict:
    s = ds.spec
    return {
        "bin_count": s.bin_count,
        "osnr_grid": list(s.osnr_grid),
        "formats": list(s.formats),
        "frames_per_point": s.frames_per_point,
        "seeds": {"master": s.seed},
        "split": {"test_frac": s.test_frac, "val_frac": s.val_frac, "stratified": s.stratified},
        "relative_frequency": s.relative_frequency,
        "pipeline_config": ds.pipeline_config,
    }


def save_dataset(ds: Dataset, path) -> None:
    """CSV with 17-significant-digit floats plus a JSON metadata sidecar."""
    path = Path(path)
    header = list(FIXED_COLUMNS) + [f"bin_{i}" for i in range(ds.bin_count)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for e, part in zip(ds.examples, ds.partition):
            w.writerow([e.fmt.value, _fmt(e.osnr_db), e.frame_index, part] + [_fmt(v) for v in e.features])
    with open(sidecar_path(path), "w", encoding="utf-8") as fh:
        json.dump(metadata(ds), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_dataset(path) -> Dataset:
    path = Path(path)
    meta_path = sidecar_path(path)
    if not meta_path.exists():
        raise FileFormatError(f"{path}: missing metadata sidecar {meta_path.name}")
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        spec = DatasetSpec(
            osnr_grid=meta["osnr_grid"],
            formats=meta["formats"],
            frames_per_point=meta["frames_per_point"],
            bin_count=meta["bin_count"],
            test_frac=meta["split"]["test_frac"],
            val_frac=meta["split"]["val_frac"],
            stratified=meta["split"]["stratified"],
            seed=meta["seeds"]["master"],
            relative_frequency=meta["relative_frequency"],
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FileFormatError(f"{meta_path}: bad metadata ({exc})") from exc

    examples, tags = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        rows = csv.reader(fh)
        header = next(rows, None)
        if not header:
            raise FileFormatError(f"{path}: empty file")
        if tuple(header[:4]) != FIXED_COLUMNS:
            raise FileFormatError(f"{path}:1: header must start with {','.join(FIXED_COLUMNS)}")
        n_bins = len(header) - 4
        if header[4:] != [f"bin_{i}" for i in range(n_bins)]:
            raise FileFormatError(f"{path}:1: bin columns must be bin_0..bin_{{B-1}}")
        if n_bins != spec.bin_count:
            raise FileFormatError(f"{path}:1: header has {n_bins} bins, metadata says {spec.bin_count}")
        for lineno, row in enumerate(rows, start=2):
            if len(row) != 4 + n_bins:
                raise FileFormatError(f"{path}:{lineno}: row has {len(row) - 4} bins, header has {n_bins}")
            try:
                fmt = ModulationFormat.parse(row[0])
                osnr = float(row[1])
                k = int(row[2])
                feats = np.array([float(v) for v in row[4:]])
                onehot, norm = encode_targets(fmt, osnr, spec.osnr_grid)
            except ValueError as exc:
                raise FileFormatError(f"{path}:{lineno}: {exc}") from exc
            if row[3] not in PARTITIONS + (UNASSIGNED,):
                raise FileFormatError(f"{path}:{lineno}: unknown partition {row[3]!r}")
            examples.append(LabeledExample(feats, onehot, norm, osnr, fmt, k))
            tags.append(row[3])
    if not examples:
        raise FileFormatError(f"{path}: no data rows")
    return Dataset(examples, spec, tags, meta.get("pipeline_config", {}))
