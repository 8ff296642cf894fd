"""How far can any linear equalizer push the CM cost on the default channel?

For i.i.d. sub-Gaussian symbols every linear combination has kurtosis at
least that of the source, so with R2 fixed the CM cost cannot fall below
R2^2 (1 - 1/kurtosis_source) in expectation; one finite frame can sit
slightly below it. This prints that floor next to the cost the
adaptive CMA reaches and a direct BFGS minimisation of the exact cost.
"""

import argparse

import numpy as np
from scipy.optimize import minimize

from mtlopm.dsp import EqualizerConfig, cma_equalize, cma_modulus, remove_dc, resample_to_2sps, \
    unequalized_cm_cost
from mtlopm.sigsim import FORMATS, SimConfig, simulate_frame


def kurtosis(x):
    x = x - x.mean()
    return float(np.mean(x**4) / np.mean(x**2) ** 2)


def best_filter_cost(x, r2, n_taps):
    win = np.lib.stride_tricks.sliding_window_view(x, n_taps)
    w0 = np.zeros(n_taps)
    w0[n_taps // 2] = 1.0

    def f(w):
        y = win @ w
        e = y * y - r2
        return np.mean(e * e), 4 * (win.T @ (e * y)) / y.size

    return minimize(f, w0, jac=True, method="BFGS").fun


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--osnr", type=float, default=40.0)
    p.add_argument("--taps", type=int, default=11)
    args = p.parse_args()
    for fmt in FORMATS:
        frame = resample_to_2sps(remove_dc(simulate_frame(fmt, SimConfig(osnr_db=args.osnr, seed=1))))
        x = frame.samples
        r2 = cma_modulus(x)
        base = unequalized_cm_cost(frame, args.taps)
        src = kurtosis(fmt.alphabet())
        floor = r2**2 * (1 - 1 / src) / base
        cma = cma_equalize(frame, EqualizerConfig(n_taps=args.taps)).final_cm_cost / base
        best = best_filter_cost(x, r2, args.taps) / base
        print(f"{fmt.value:5s} source kurtosis {src:.3f}  received {kurtosis(x):.3f}  "
              f"population floor {floor:.3f}  CMA {cma:.3f}  BFGS {best:.3f}")


if __name__ == "__main__":
    main()
