"""Command-line entry point: ``mtlopm {simulate,train,evaluate,sweep}``.

Configuration precedence: built-in defaults < ``--config file.json`` <
individual flags. Every config key is exposed as ``--key-name``; all
randomness derives from ``--seed``.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import experiments as ex
from .dsp import EqualizerConfig
from .features import DatasetSpec, build_frame_bank, load_dataset, save_dataset, split_dataset
from .mtlnet import (OSNR, LossWeights, TrainConfig, init_network, load_model, load_model_with_weights,
                     save_model, train)
from .sigsim import SimConfig

# Per-module seeds and the per-frame OSNR are derived, never configured.
EXCLUDED = {"sim": {"seed", "osnr_db"}, "dataset": {"seed"}, "train": {"seed"}}


@dataclass
class TopologySection:
    shared_neurons: int | None = None
    branch_hidden: int | None = None


@dataclass
class SweepSection:
    values: tuple | None = None
    n_seeds: int = 8


SECTIONS = {
    "sim": SimConfig,
    "dataset": DatasetSpec,
    "equalizer": EqualizerConfig,
    "topology": TopologySection,
    "train": TrainConfig,
    "loss": LossWeights,
    "sweep": SweepSection,
}
TOP_LEVEL = {"seed": 0, "out": "out", "jobs": 1}

# Argument types for fields whose default does not reveal them.
FIELD_TYPES = {
    "channel_taps": ("list", float),
    "osnr_grid": ("list", float),
    "formats": ("list", str),
    "values": ("list", float),
    "dac_bits": ("scalar", int),
    "shared_neurons": ("scalar", int),
    "branch_hidden": ("scalar", int),
}


def _fields(section: str):
    skip = EXCLUDED.get(section, set())
    return [f for f in dataclasses.fields(SECTIONS[section]) if f.name not in skip]


def _default(f):
    if f.default is not dataclasses.MISSING:
        return f.default
    if f.default_factory is not dataclasses.MISSING:
        return f.default_factory()
    return None


@dataclass
class RunConfig:
    sections: dict = field(default_factory=lambda: {name: {} for name in SECTIONS})
    seed: int = 0
    out: str = "out"
    jobs: int = 1

    def build(self, name: str):
        """Instantiate a section's dataclass (validation happens there)."""
        kwargs = dict(self.sections.get(name, {}))
        if name == "dataset":
            kwargs["seed"] = self.seed
        return SECTIONS[name](**kwargs)

    def resolved(self) -> dict:
        d = {}
        for name in SECTIONS:
            obj = asdict(self.build(name))
            for k in EXCLUDED.get(name, ()):
                obj.pop(k, None)
            d[name] = obj
        d.update(seed=self.seed, jobs=self.jobs)
        return d

    def validate(self):
        for name in SECTIONS:
            self.build(name)
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")


def _bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _coerce(name, value):
    kind = FIELD_TYPES.get(name)
    if kind and kind[0] == "list":
        return tuple(value) if value is not None else None
    return value


def load_config_file(path) -> dict:
    """Parse and key-check a JSON config; unknown keys are rejected."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ValueError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ValueError(f"config {path} must be a JSON object")
    for key, val in data.items():
        if key in TOP_LEVEL:
            continue
        if key not in SECTIONS:
            raise ValueError(f"config {path}: unknown key {key!r}")
        if not isinstance(val, dict):
            raise ValueError(f"config {path}: section {key!r} must be an object")
        allowed = {f.name for f in _fields(key)}
        for k in val:
            if k not in allowed:
                raise ValueError(f"config {path}: unknown key {key}.{k}")
    return data


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", metavar="PATH", help="JSON config file (sections mirror the flag groups)")
    p.add_argument("--seed", type=int, default=None, help=f"master seed (default: {TOP_LEVEL['seed']})")
    p.add_argument("--out", default=None, metavar="DIR", help=f"output directory (default: {TOP_LEVEL['out']})")
    p.add_argument("--jobs", type=int, default=None, metavar="N", help="worker processes (default: 1)")
    p.add_argument("--force", action="store_true", help="overwrite existing output files")
    for section in SECTIONS:
        g = p.add_argument_group(section)
        for f in _fields(section):
            flag = "--" + f.name.replace("_", "-")
            default = _default(f)
            help_ = f"default: {default}"
            kind = FIELD_TYPES.get(f.name)
            common = {"dest": f"{section}.{f.name}", "default": None, "help": help_, "metavar": f.name.upper()}
            if kind and kind[0] == "list":
                g.add_argument(flag, nargs="+", type=kind[1], **common)
            elif kind:
                g.add_argument(flag, type=kind[1], **common)
            elif isinstance(default, bool):
                g.add_argument(flag, type=_bool, **common)
            else:
                g.add_argument(flag, type=type(default), **common)
    g = p.add_argument_group("shortcuts")
    g.add_argument("--osnr", dest="dataset.osnr_grid", nargs="+", type=float, default=None,
                   metavar="DB", help="alias of --osnr-grid")
    g.add_argument("--loss-ratio", type=float, default=None, help="set w_mfi = 1 and w_osnr = RATIO")


def config_from_args(args) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        data = load_config_file(args.config)
        for key, val in data.items():
            if key in TOP_LEVEL:
                setattr(cfg, key, val)
            else:
                cfg.sections[key].update({k: _coerce(k, v) for k, v in val.items()})
    for key in TOP_LEVEL:
        v = getattr(args, key, None)
        if v is not None:
            setattr(cfg, key, v)
    for dest, v in vars(args).items():
        if "." in dest and v is not None:
            section, name = dest.split(".", 1)
            cfg.sections[section][name] = _coerce(name, v)
    if getattr(args, "loss_ratio", None) is not None:
        cfg.sections["loss"].update(w_mfi=1.0, w_osnr=float(args.loss_ratio))
    cfg.validate()
    return cfg


class Outputs:
    """Collects output paths and refuses to clobber files without --force."""

    def __init__(self, out_dir, force: bool):
        self.dir = Path(out_dir)
        self.force = force

    def claim(self, *names) -> list[Path]:
        paths = [self.dir / n for n in names]
        existing = [str(p) for p in paths if p.exists()]
        if existing and not self.force:
            raise FileExistsError(f"refusing to overwrite {', '.join(existing)} (use --force)")
        self.dir.mkdir(parents=True, exist_ok=True)
        return paths


def _clean(obj):
    """NaN -> None so JSON stays standard."""
    if isinstance(obj, float) and math.isnan(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def cmd_simulate(args, cfg: RunConfig) -> int:
    csv_path, meta_path = Outputs(cfg.out, args.force).claim("dataset.csv", "dataset.json")
    spec = cfg.build("dataset")
    bank = build_frame_bank(spec, cfg.build("sim"), cfg.build("equalizer"), jobs=cfg.jobs)
    ds = split_dataset(bank.dataset())
    save_dataset(ds, csv_path)
    check = load_dataset(csv_path)
    if len(check) != len(ds):
        raise RuntimeError(f"{csv_path} failed validation after writing")
    c = ds.counts()
    print(f"{len(ds)} examples ({c['train']} train / {c['val']} val / {c['test']} test)")
    return 0


def _train_seed(cfg: RunConfig) -> int:
    return ex.seed_schedule(cfg.seed, 1)[0]


def cmd_train(args, cfg: RunConfig) -> int:
    model_path, hist_path, conf_path = Outputs(cfg.out, args.force).claim("model.json", "history.csv", "train.json")
    ds = load_dataset(args.dataset)
    if all(p == "unassigned" for p in ds.partition):
        ds = split_dataset(ds, cfg.seed)
    topo_cfg = cfg.build("topology")
    kind = {"mfi": "stl_mfi", "osnr": "stl_osnr", None: "mtl"}[args.stl]
    topo = ex.topology_for(kind, ds.bin_count, topo_cfg.shared_neurons, topo_cfg.branch_hidden)
    seed = _train_seed(cfg)
    tcfg = TrainConfig(**{**asdict(cfg.build("train")), "seed": seed})
    weights = ex.kind_weights(kind, cfg.build("loss"))
    net, hist = train(init_network(topo, seed), ds, tcfg, weights)
    save_model(net, model_path, weights)
    ex.write_csv(hist_path, hist.rows, ["epoch", "train_loss", "val_loss", "val_acc", "val_rmse_db"])
    ex.write_json(conf_path, _clean({"config": cfg.resolved(), "kind": kind, "train_seed": seed,
                                     "best_epoch": hist.best_epoch, "epochs_run": len(hist.rows)}))
    load_model(model_path)
    best = hist.rows[hist.best_epoch - 1] if hist.best_epoch else None
    msg = f"trained {kind} for {len(hist.rows)} epochs (best epoch {hist.best_epoch}"
    if best is not None:
        msg += f", val loss {best['val_loss']:.6g}"
    print(msg + ")")
    return 0


def cmd_evaluate(args, cfg: RunConfig) -> int:
    metrics_path, scatter_path, scatter_meta = Outputs(cfg.out, args.force).claim(
        "metrics.json", "scatter.csv", "scatter.json")
    net, _ = load_model_with_weights(args.model)
    ds = load_dataset(args.dataset)
    if net.topology.input_size != ds.bin_count:
        raise ValueError(f"model expects {net.topology.input_size} bins, dataset has {ds.bin_count}")
    part = args.partition
    m = ex.evaluate(net, ds, part)
    ex.write_json(metrics_path, _clean({"partition": part, **m.to_dict()}))
    rows = []
    if net.topology.tasks.count(OSNR):
        rows = [{"true_osnr_db": t, "est_osnr_db": e} for t, e in ex.scatter_true_vs_estimated(net, ds, part)]
    ex.write_csv(scatter_path, rows, ["true_osnr_db", "est_osnr_db"])
    ex.write_json(scatter_meta, _clean({"config": cfg.resolved(), "partition": part}))
    json.loads(metrics_path.read_text(encoding="utf-8"))
    print(f"accuracy {m.mfi_accuracy:.4f}  rmse {m.osnr_rmse_db:.4f} dB  on {m.n_examples} {part} examples")
    return 0


SWEEPS = {
    "bins": ("bin_count", ex.DEFAULT_BINS, ex.sweep_bins),
    "shared": ("shared_neurons", ex.DEFAULT_SHARED, ex.sweep_shared_neurons),
    "loss-ratio": ("loss_ratio", ex.DEFAULT_RATIOS, ex.sweep_loss_ratio),
}


def cmd_sweep(args, cfg: RunConfig) -> int:
    stem = f"sweep_{args.kind.replace('-', '_')}"
    csv_path, meta_path = Outputs(cfg.out, args.force).claim(stem + ".csv", stem + ".json")
    parameter, defaults, fn = SWEEPS[args.kind]
    sw = cfg.build("sweep")
    values = tuple(sw.values) if sw.values else defaults
    if parameter != "loss_ratio":
        values = tuple(int(v) for v in values)
    spec = ex.SweepSpec(parameter, values, n_seeds=sw.n_seeds, master_seed=cfg.seed,
                        train=cfg.build("train"), weights=cfg.build("loss"))
    bank = build_frame_bank(cfg.build("dataset"), cfg.build("sim"), cfg.build("equalizer"), jobs=cfg.jobs)
    rows = fn(bank, spec, jobs=cfg.jobs)
    records, cols = ex.sweep_records(rows)
    ex.write_csv(csv_path, records, cols)
    ex.write_json(meta_path, _clean({"config": cfg.resolved(), "sweep": args.kind, "values": list(values),
                                     "seeds": ex.seed_schedule(cfg.seed, sw.n_seeds)}))
    for kind in dict.fromkeys(r.kind for r in rows):
        best = ex.optimal_value(rows, kind)
        if best is not None:
            print(f"optimal {parameter} for {kind}: {fmt_value(best)}")
    return 0


def fmt_value(v):
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mtlopm", description="Multi-task OSNR monitoring and format identification")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("simulate", help="simulate frames and write the labeled AH dataset")
    _add_config_flags(s)
    t = sub.add_parser("train", help="train an MTL (or STL) network on a dataset file")
    t.add_argument("--dataset", required=True, metavar="CSV")
    t.add_argument("--stl", choices=("mfi", "osnr"), default=None, help="train a single-task variant")
    _add_config_flags(t)
    e = sub.add_parser("evaluate", help="evaluate a model on a dataset partition")
    e.add_argument("--model", required=True, metavar="JSON")
    e.add_argument("--dataset", required=True, metavar="CSV")
    e.add_argument("--partition", default="test", choices=("train", "val", "test"))
    _add_config_flags(e)
    w = sub.add_parser("sweep", help="run a hyperparameter sweep")
    w.add_argument("kind", choices=tuple(SWEEPS))
    _add_config_flags(w)
    return p


COMMANDS = {"simulate": cmd_simulate, "train": cmd_train, "evaluate": cmd_evaluate, "sweep": cmd_sweep}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
        return COMMANDS[args.command](args, cfg)
    except Exception as exc:  # one-line diagnostic, nonzero exit
        print(f"mtlopm {args.command}: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
