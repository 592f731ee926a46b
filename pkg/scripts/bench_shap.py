"""Time TreeSHAP and interaction values on a trained model and check local accuracy."""

import argparse
import time

import numpy as np

from retention_lab import shap
from retention_lab.binning import bin_features
from retention_lab.gbdt import TrainConfig, train
from retention_lab.records import SynthConfig, synth_cohort, to_arrays


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--iterations", type=int, default=500)
    p.add_argument("--interaction-rows", type=int, default=200)
    args = p.parse_args()

    X, y = to_arrays(synth_cohort(SynthConfig(n_students=args.n)))
    t0 = time.perf_counter()
    model, _ = train(bin_features(X, y), None, TrainConfig(num_iterations=args.iterations))
    t1 = time.perf_counter()
    phi, base = shap.shap_values(model, X)
    t2 = time.perf_counter()
    inter, _ = shap.shap_interaction_values(model, X[: args.interaction_rows])
    t3 = time.perf_counter()

    gap = np.max(np.abs(base + phi.sum(axis=1) - model.predict_margin(X)))
    sym = np.max(np.abs(inter - inter.transpose(0, 2, 1)))
    print(f"train      {t1 - t0:7.2f} s  ({len(model.trees)} trees)")
    print(f"shap       {t2 - t1:7.2f} s  ({len(X)} rows, local accuracy gap {gap:.2e})")
    print(f"interact   {t3 - t2:7.2f} s  ({len(inter)} rows, asymmetry {sym:.2e})")


if __name__ == "__main__":
    main()
