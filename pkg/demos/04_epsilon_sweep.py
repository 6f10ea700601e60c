"""
Success rate against perturbation amplitude
===========================================

The harness trains the default fixture, attacks the validation set once
per epsilon and writes a CSV table, an SVG chart and one trace file per
run.  The same study is ``pgdlab sweep-epsilon`` on the command line.
"""

# %% Configure and run
from pgdlab import harness

cfg = harness.ExperimentConfig(output_dir="runs/demo_epsilon")
result = harness.run_epsilon_sweep(cfg)

# %% The curve
for p in result.result.points:
    print(f"epsilon {p.value:.2f}  success {p.rate:.3f}  ({p.successful}/{p.eligible})")
print("table:", result.csv_path)
print("chart:", result.chart_path)

# %% Success by iteration at the largest epsilon
it = harness.run_iteration_study(cfg.replace(output_dir="runs/demo_iterations", attack_epsilon=0.2))
print([round(r, 3) for r in it.result.rates])
