"""
Does high confidence protect an image?
======================================

Validation images are grouped by the model's maximal class probability on
the clean image (bins of width 0.05 over [0.5, 1]) and the attack success
rate is computed per bin.
"""

# %% The binning rule on a worked example
from pgdlab.analytics import BIN_EDGES, bin_index

for conf in (0.81, 0.8, 0.7999, 1.0):
    i = bin_index(conf)
    print(f"{conf} -> [{BIN_EDGES[i]:.2f}, {BIN_EDGES[i + 1]:.2f}]")

# %% Per-bin success on the trained fixture
from pgdlab import harness

cfg = harness.ExperimentConfig(output_dir="runs/demo_confidence", attack_epsilon=0.05)
res = harness.run_confidence_study(cfg)
for b in res.result.bins:
    rate = "  -  " if not b.eligible else f"{b.rate:.3f}"
    print(f"[{b.low:.2f}, {b.high:.2f}]  {rate}  ({b.successful}/{b.eligible})")

# %% Pooled comparison: the top bin against everything below 0.80
low_s, low_e = res.result.pooled(0.5, 0.8)
top = res.result.bins[-1]
print(f"top bin {top.successful}/{top.eligible}, below 0.80 {low_s}/{low_e}")
