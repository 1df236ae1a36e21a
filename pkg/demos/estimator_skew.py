"""
Product estimator versus integrated hazard
==========================================

With thousands of distinct event times, multiplying one minus the
classifier output over every event time drives S(5|x) to zero. Integrating
a calibrated hazard does not.
"""

# %%
import numpy as np

from survstack.gam import GamConfig, fit_gam
from survstack.pipeline import estimator_distributions
from survstack.prediction import calibrate
from survstack.preprocess import train_test_split
from survstack.stacking import StackingConfig, stack
from survstack.synth import SyntheticSpec, generate

data, oracle = generate(SyntheticSpec(n=5000, seed=0))
train, test = train_test_split(data, 0.2, seed=0)
gamma = 0.02
stacked = stack(train, StackingConfig(gamma, seed=0))
model = fit_gam(stacked.rows, stacked.labels, GamConfig(seed=0))
event_times = np.unique(train.time[train.event])
print(f"{event_times.size} distinct training event times")

# %%
# Both histograms share the same bin edges on [0, 1].
rep = estimator_distributions(model, calibrate(model, gamma, train), test.X, 5.0, event_times,
                              bins=10)
print("bin        product  integral")
for lo, a, b in zip(rep["bin_edges"], rep["product"]["histogram"], rep["integral"]["histogram"]):
    print(f"[{lo:.1f}, {lo + 0.1:.1f})  {a:7d}  {b:8d}")

truth = np.median(oracle.survival(test.X, [5.0])[:, 0])
print(f"median S(5|x): product {rep['product']['median']:.3f}, "
      f"integral {rep['integral']['median']:.3f}, true {truth:.3f}")
