"""Bin-count, shared-neuron and loss-ratio sweeps plus the STL/MTL comparison.

All tables come from one frame bank, so only the swept quantity changes.
"""

import argparse
import time
from pathlib import Path

from mtlopm import experiments as ex
from mtlopm.features import DatasetSpec, build_frame_bank
from mtlopm.mtlnet import TrainConfig

SWEEPS = {
    "bins": ("bin_count", ex.DEFAULT_BINS, ex.sweep_bins),
    "shared": ("shared_neurons", ex.DEFAULT_SHARED, ex.sweep_shared_neurons),
    "loss_ratio": ("loss_ratio", ex.DEFAULT_RATIOS, ex.sweep_loss_ratio),
}


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("which", nargs="*", default=[*SWEEPS, "compare"], choices=[*SWEEPS, "compare"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-seeds", type=int, default=8)
    p.add_argument("--max-epochs", type=int, default=2000)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default="results")
    args = p.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train_cfg = TrainConfig(max_epochs=args.max_epochs)

    bank = build_frame_bank(DatasetSpec(seed=args.seed), jobs=args.jobs)
    for name in args.which:
        t0 = time.perf_counter()
        if name == "compare":
            report = ex.compare_stl_mtl(bank, args.n_seeds, args.seed, train_cfg, jobs=args.jobs)
            ex.write_csv(out / "compare_stl_mtl.csv", report)
            for r in report:
                print(f"{r['kind']:9s} neurons {r['n_neurons']:4d}  acc {r['acc_avg']:.4f}  "
                      f"rmse {r['rmse_avg']:.3f} dB (spread {r['rmse_spread']:.3f})")
        else:
            parameter, values, fn = SWEEPS[name]
            spec = ex.SweepSpec(parameter, values, n_seeds=args.n_seeds, master_seed=args.seed, train=train_cfg)
            rows = fn(bank, spec, jobs=args.jobs)
            records, cols = ex.sweep_records(rows)
            ex.write_csv(out / f"sweep_{name}.csv", records, cols)
            for kind in dict.fromkeys(r.kind for r in rows):
                print(f"{name}: optimal {parameter} for {kind} = {ex.optimal_value(rows, kind)}")
        print(f"{name} done in {time.perf_counter() - t0:.0f} s")


if __name__ == "__main__":
    main()
