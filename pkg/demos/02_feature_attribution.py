"""Feature attribution on a head: raw values, reduction, normalization.

Run from the repository root: python3 demos/02_feature_attribution.py
"""

import numpy as np

from sicdn import tensor as T
from sicdn.shap import ShapConfig, batch_mean_abs, gradient_shap, minmax_normalize

rng = np.random.default_rng(1)

# a linear head makes the estimator exact: phi_i = w_i * (a_i - a'_i)
w = np.array([[2.0, -3.0, 0.0, 0.5]], dtype=np.float32)  # one output, four features
head = lambda feats: T.linear_forward(feats, T.Tensor(w), T.Tensor(np.zeros(1, np.float32)))

target = np.array([[1.0, 1.0, 1.0, 1.0]], dtype=np.float32)
background = np.zeros((1, 4), dtype=np.float32)
cfg = ShapConfig(num_path_samples=32, noise_std=0.0, seed=0)
(phi,) = gradient_shap(head, target, background, cfg)
print("attributions (one column per class):\n", phi)
print("feature 2 has zero weight and attributes exactly zero:", phi[2, 0])

# completeness: the attributions sum to the output difference
print("sum of attributions:", phi.sum(), " f(a) - f(a'): ",
      float(head(T.Tensor(target)).data[0, 0] - head(T.Tensor(background)).data[0, 0]))

# with several samples the raw matrices are averaged before the absolute
# value, so opposite signs cancel
raw = [np.array([[1.0], [0.3]]), np.array([[-1.0], [0.3]])]
reduced = batch_mean_abs(raw)
print("\nmean-then-abs of {+1,-1} and {+0.3,+0.3}:\n", reduced.values)

# min-max normalization maps the reduced matrix onto [0, 1]; a constant
# matrix becomes all ones (every feature equally important, scaling inert)
normalized = minmax_normalize(reduced)
print("normalized:\n", normalized.values)
constant = batch_mean_abs([np.full((3, 2), 0.4)])
print("degenerate constant matrix normalizes to:\n", minmax_normalize(constant).values)
