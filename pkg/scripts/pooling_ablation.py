#!/usr/bin/env python3
"""Median test MAE over several seeds with and without max-pooling."""
import argparse

import numpy as np

from scalocast import synth
from scalocast.config import ExperimentConfig
from scalocast.forecaster import load_dataset, run_experiment

CHEAP = {
    "features": ["c24", "c168", "t_amb"],
    "model.filters": [4, 8],
    "model.dense": [64],
    "training.max_epochs": 25,
    "training.patience": 10,
    "training.shuffle": True,
    "baselines": False,
}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--epochs", type=int, default=CHEAP["training.max_epochs"])
    args = ap.parse_args()

    ds = synth.generate(synth.SynthConfig(seed=0, years=3))
    base = ExperimentConfig()
    dataset, report = load_dataset(base.data, base.preprocess, ds.demand, ds.weather, ds.calendar)
    for pooling in (False, True):
        maes = []
        for seed in range(args.seeds):
            overrides = {**CHEAP, "model.pooling": pooling, "training.max_epochs": args.epochs}
            cfg = ExperimentConfig(seed=seed).replace(**overrides)
            maes.append(run_experiment(cfg, dataset, outliers=report).report.aggregate()["mae"]["mean"])
        print(f"pooling={pooling!s:5s} median MAE {np.median(maes):8.2f}  per seed {np.round(maes, 1).tolist()}")


if __name__ == "__main__":
    main()
