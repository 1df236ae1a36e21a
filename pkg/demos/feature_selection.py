"""
Picking features by pruning a forest
====================================

Grow shallow bagged-boosted trees, then shrink their weights with LASSO
until only trees covering k features survive.
"""

# %%
# Five informative columns hidden among forty-five noise columns.
import numpy as np

from survstack.selection import ForestConfig, select_features, select_features_linear

rng = np.random.default_rng(0)
X = rng.standard_normal((2000, 50))
score = X[:, :5] @ np.array([1.0, -1.0, 0.8, -0.8, 0.6])
y = (rng.random(2000) < 1 / (1 + np.exp(-score))).astype(int)

# %%
res = select_features(X, y, k=10, config=ForestConfig(seed=0))
print("forest-pruning pick:", sorted(res.selected))
print(f"lambda {res.lam:.4g}, {np.count_nonzero(res.weights)} trees kept of {res.weights.size}")

# %%
# A linear LASSO on the raw columns for comparison.
lin = select_features_linear(X, y, k=10)
print("linear LASSO pick:  ", sorted(lin.selected))
