"""Evaluation, multi-seed statistics and the hyperparameter sweeps.

All sweeps share one ``FrameBank`` (simulated + equalized frames) per
master seed and only re-histogram when the bin count changes. Every
(value, network kind, seed) cell is independent; tables are assembled in
canonical order so the output does not depend on scheduling.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyPartition, SeedError
from .features import Dataset, FrameBank, decode_osnr, split_dataset
from .mtlnet import (MFI, OSNR, LossWeights, MtlNetwork, MtlTopology, TrainConfig, count_neurons,
                     count_parameters, forward, init_network, make_stl, train)
from .rng import derive_seed

KINDS = ("mtl", "stl_mfi", "stl_osnr")
SWEEP_COLUMNS = ("value", "kind", "acc_avg", "acc_min", "acc_max", "rmse_avg", "rmse_min", "rmse_max",
                 "n_neurons", "n_params")

DEFAULT_BINS = (50, 80, 100, 150, 200, 250, 300)
DEFAULT_SHARED = (20, 40, 60, 80, 100, 110, 120, 140)
DEFAULT_RATIOS = (1, 2, 3, 4, 5, 6, 7, 8, 9, 10)

# Default operating points: MTL and STL sizes and the OSNR:MFI loss ratio.
MTL_BINS, MTL_SHARED = 100, 60
STL_BINS, STL_SHARED = 200, 110
OPTIMAL_RATIO = 5.0


@dataclass
class Metrics:
    mfi_accuracy: float
    osnr_rmse_db: float
    confusion: list | None  # 3x3 counts, rows = true class
    per_osnr_error: list  # (true dB, mean estimate dB, rmse dB)
    n_examples: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(net: MtlNetwork, dataset: Dataset, part: str = "test", grid=None) -> Metrics:
    X, Y, _, y_db = dataset.arrays(part)
    if len(X) == 0:
        raise EmptyPartition(f"partition {part!r} is empty")
    grid = dataset.spec.osnr_grid if grid is None else grid
    out = forward(net, X)
    acc, confusion = math.nan, None
    if out.mfi is not None:
        pred = np.argmax(out.mfi, axis=1)
        true = np.argmax(Y, axis=1)
        cm = np.zeros((3, 3), dtype=int)
        np.add.at(cm, (true, pred), 1)
        confusion = cm.tolist()
        acc = float(np.trace(cm) / cm.sum())
    rmse, per = math.nan, []
    if out.osnr is not None:
        est = decode_osnr(out.osnr, grid)
        rmse = float(np.sqrt(np.mean((est - y_db) ** 2)))
        for v in np.unique(y_db):
            m = y_db == v
            per.append((float(v), float(est[m].mean()), float(np.sqrt(np.mean((est[m] - v) ** 2)))))
    return Metrics(acc, rmse, confusion, per, int(len(X)))


def scatter_true_vs_estimated(net: MtlNetwork, dataset: Dataset, part: str = "test") -> list:
    """(true dB, estimated dB) per example, sorted by true OSNR (stable)."""
    X, _, _, y_db = dataset.arrays(part)
    if len(X) == 0:
        return []
    est = decode_osnr(forward(net, X).osnr, dataset.spec.osnr_grid)
    order = np.argsort(y_db, kind="stable")
    return [(float(y_db[i]), float(est[i])) for i in order]


def _agg(values) -> tuple[float, float, float]:
    v = np.asarray(values, dtype=float)
    if v.size == 0 or np.all(np.isnan(v)):
        return math.nan, math.nan, math.nan
    return float(np.nanmean(v)), float(np.nanmin(v)), float(np.nanmax(v))


@dataclass
class RunStats:
    metrics: list
    seeds: list = field(default_factory=list)

    @property
    def accuracy(self) -> tuple[float, float, float]:
        """(avg, min, max) MFI accuracy over seeds."""
        return _agg([m.mfi_accuracy for m in self.metrics])

    @property
    def rmse(self) -> tuple[float, float, float]:
        return _agg([m.osnr_rmse_db for m in self.metrics])


def seed_schedule(master_seed: int, n_seeds: int) -> list[int]:
    """seed_i = hash(master, i); extending the list never changes earlier seeds."""
    return [derive_seed(master_seed, 0x5EED, i) for i in range(n_seeds)]


def topology_for(kind: str, bin_count: int, shared: int | None = None,
                 branch_hidden: int | None = None) -> MtlTopology:
    topo = MtlTopology.default(bin_count, shared, branch_hidden)
    if kind == "mtl":
        return topo
    if kind == "stl_mfi":
        return make_stl(topo, MFI)
    if kind == "stl_osnr":
        return make_stl(topo, OSNR)
    raise ValueError(f"unknown network kind {kind!r}")


def kind_weights(kind: str, weights: LossWeights) -> LossWeights:
    # A single-task network carries only its own loss term at unit weight.
    return weights if kind == "mtl" else LossWeights(1.0, 1.0, weights.mfi_loss)


def _train_cell(args):
    dataset, topology, kind, train_cfg, weights, seed = args
    try:
        net = init_network(topology, seed)
        cfg = TrainConfig(**{**asdict(train_cfg), "seed": seed})
        net, _ = train(net, dataset, cfg, kind_weights(kind, weights))
        return evaluate(net, dataset, "test")
    except Exception as exc:
        raise SeedError(seed, exc) from exc


def _run_cells(cells, jobs: int) -> list:
    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_train_cell, cells))
    return [_train_cell(c) for c in cells]


def multi_seed_run(dataset: Dataset, topology: MtlTopology, kind: str = "mtl", train_cfg: TrainConfig | None = None,
                   weights: LossWeights | None = None, n_seeds: int = 8, master_seed: int = 0,
                   jobs: int = 1) -> RunStats:
    """Train ``n_seeds`` networks on one fixed split and aggregate test metrics.

    Only network initialization and minibatch order change between seeds.
    """
    train_cfg = train_cfg or TrainConfig()
    weights = weights or LossWeights()
    seeds = seed_schedule(master_seed, n_seeds)
    cells = [(dataset, topology, kind, train_cfg, weights, s) for s in seeds]
    return RunStats(_run_cells(cells, jobs), seeds)


@dataclass
class SweepSpec:
    parameter: str  # bin_count | shared_neurons | loss_ratio
    values: tuple
    n_seeds: int = 8
    kinds: tuple = KINDS
    master_seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if self.parameter not in ("bin_count", "shared_neurons", "loss_ratio"):
            raise ValueError(f"unknown sweep parameter {self.parameter!r}")
        if not self.values:
            raise ValueError("sweep values must be nonempty")
        if any(b <= a for a, b in zip(self.values, self.values[1:])):
            raise ValueError("sweep values must be strictly increasing")
        if self.n_seeds < 1:
            raise ValueError("n_seeds must be >= 1")
        bad = [k for k in self.kinds if k not in KINDS]
        if bad:
            raise ValueError(f"unknown network kinds {bad}")


@dataclass
class SweepRow:
    value: float
    kind: str
    stats: RunStats
    n_neurons: int
    n_params: int
    extra: dict = field(default_factory=dict)

    def as_record(self) -> dict:
        acc, rmse = self.stats.accuracy, self.stats.rmse
        rec = {"value": self.value, "kind": self.kind,
               "acc_avg": acc[0], "acc_min": acc[1], "acc_max": acc[2],
               "rmse_avg": rmse[0], "rmse_min": rmse[1], "rmse_max": rmse[2],
               "n_neurons": self.n_neurons, "n_params": self.n_params}
        rec.update(self.extra)
        return rec


def _split(bank: FrameBank, bin_count: int) -> Dataset:
    return split_dataset(bank.dataset(bin_count))


def _grid_rows(plan, spec: SweepSpec, jobs: int) -> list[SweepRow]:
    """plan: list of (value, kind, dataset, topology, weights)."""
    seeds = seed_schedule(spec.master_seed, spec.n_seeds)
    cells = [(ds, topo, kind, spec.train, w, s) for _, kind, ds, topo, w in plan for s in seeds]
    results = _run_cells(cells, jobs)
    rows = []
    for i, (value, kind, _, topo, _) in enumerate(plan):
        ms = results[i * len(seeds) : (i + 1) * len(seeds)]
        rows.append(SweepRow(value, kind, RunStats(ms, seeds), count_neurons(topo), count_parameters(topo)))
    return rows


def sweep_bins(bank: FrameBank, spec: SweepSpec, jobs: int = 1) -> list[SweepRow]:
    """Re-histogram the same frames at each bin count; trunk sized B/2."""
    plan = []
    for b in spec.values:
        ds = _split(bank, int(b))
        for kind in spec.kinds:
            plan.append((b, kind, ds, topology_for(kind, int(b)), spec.weights))
    return _grid_rows(plan, spec, jobs)


def sweep_shared_neurons(bank: FrameBank, spec: SweepSpec, mtl_bins: int = MTL_BINS,
                         stl_bins: int = STL_BINS, jobs: int = 1) -> list[SweepRow]:
    """Shared-layer width sweep; branches follow shared/2 automatically."""
    kinds = [k for k in spec.kinds if k != "stl_mfi"] or list(spec.kinds)
    data = {mtl_bins: _split(bank, mtl_bins), stl_bins: _split(bank, stl_bins)}
    plan = []
    for n in spec.values:
        for kind in kinds:
            b = mtl_bins if kind == "mtl" else stl_bins
            plan.append((n, kind, data[b], topology_for(kind, b, int(n)), spec.weights))
    return _grid_rows(plan, spec, jobs)


def sweep_loss_ratio(bank: FrameBank, spec: SweepSpec, bins: int = MTL_BINS, shared: int = MTL_SHARED,
                     stl_bins: int = STL_BINS, stl_shared: int = STL_SHARED, jobs: int = 1) -> list[SweepRow]:
    """MTL at w_mfi = 1, w_osnr = ratio, with the STL-OSNR RMSE as a reference column."""
    ds = _split(bank, bins)
    topo = topology_for("mtl", bins, shared)
    plan = [(r, "mtl", ds, topo, LossWeights(1.0, float(r), spec.weights.mfi_loss)) for r in spec.values]
    stl_topo = topology_for("stl_osnr", stl_bins, stl_shared)
    plan.append((math.nan, "stl_osnr", _split(bank, stl_bins), stl_topo, spec.weights))
    rows = _grid_rows(plan, spec, jobs)
    baseline = rows.pop()
    for row in rows:
        row.extra["stl_osnr_rmse_avg"] = baseline.stats.rmse[0]
    return rows


def optimal_value(rows: list[SweepRow], kind: str):
    """Value with the smallest rmse_avg for ``kind``; ties go to the smaller value."""
    cands = [(r.stats.rmse[0], r.value) for r in rows if r.kind == kind and not math.isnan(r.stats.rmse[0])]
    if not cands:
        return None
    return min(cands)[1]


def compare_stl_mtl(bank: FrameBank, n_seeds: int = 8, master_seed: int = 0, train_cfg: TrainConfig | None = None,
                    ratio: float = OPTIMAL_RATIO, jobs: int = 1) -> list[dict]:
    """Side-by-side MTL vs STL-MFI vs STL-OSNR at their reported optimal sizes."""
    train_cfg = train_cfg or TrainConfig()
    setups = [("mtl", MTL_BINS, MTL_SHARED), ("stl_mfi", STL_BINS, STL_SHARED), ("stl_osnr", STL_BINS, STL_SHARED)]
    data = {b: _split(bank, b) for b in {MTL_BINS, STL_BINS}}
    report = []
    for kind, b, shared in setups:
        topo = topology_for(kind, b, shared)
        st = multi_seed_run(data[b], topo, kind, train_cfg, LossWeights.from_ratio(ratio), n_seeds, master_seed, jobs)
        acc, rmse = st.accuracy, st.rmse
        report.append({"kind": kind, "bins": b, "shared": shared,
                       "n_neurons": count_neurons(topo), "n_params": count_parameters(topo),
                       "acc_avg": acc[0], "acc_min": acc[1], "acc_max": acc[2],
                       "rmse_avg": rmse[0], "rmse_min": rmse[1], "rmse_max": rmse[2],
                       "rmse_spread": rmse[2] - rmse[1]})
    return report


def fmt_float(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    if isinstance(x, str):
        return x
    return format(float(x), ".17g")


def write_csv(path, records: list[dict], columns=None) -> None:
    columns = list(columns or (records[0].keys() if records else []))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for rec in records:
            w.writerow([fmt_float(rec[c]) for c in columns])


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n", encoding="utf-8")


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def sweep_records(rows: list[SweepRow]) -> tuple[list[dict], list[str]]:
    records = [r.as_record() for r in rows]
    cols = list(SWEEP_COLUMNS) + [k for k in (records[0] if records else {}) if k not in SWEEP_COLUMNS]
    return records, cols
