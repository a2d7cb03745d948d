"""Labelling an unlabelled window against a 650/350 baseline.

2-means seeds a Gaussian mixture on the window alone; a second mixture runs
on the window joined with the baseline.  Both posteriors are averaged.
The script prints how each stage agrees with the generator's labels.

    python demos/02_pseudo_labels.py
"""

import numpy as np

from twinguard import labeling as lb
from twinguard.dataprep import Dataset
from twinguard.labels import DDOS, NOT_DDOS

rng = np.random.default_rng(1)


def two_class(n_ddos, n_benign, delta=1.5):
    X = rng.standard_normal((n_ddos + n_benign, 10))
    y = np.r_[np.full(n_ddos, DDOS), np.full(n_benign, NOT_DDOS)]
    X[y == DDOS] += delta
    return 500.0 + 40.0 * X, y


Xp, yp = two_class(3000, 2000)
baseline = lb.make_baseline(Dataset(Xp, yp, tuple(f"s{j}" for j in range(10))), range(10), seed=1)
print(f"baseline: {len(baseline)} rows, {int(np.sum(baseline.labels == DDOS))} DDoS")

for share in (0.2, 0.5, 0.8, 0.0):
    n_d = int(1000 * share)
    W, truth = two_class(n_d, 1000 - n_d)
    out = lb.run_labeling(W, baseline, seed=2)
    acc = np.mean(out.labels[:1000] == truth)
    print(f"window with {share:.0%} DDoS: label accuracy {acc:.3f}, "
          f"federated set {out.features.shape}, flags {sorted(out.flags) or 'none'}")
