"""Regenerate the committed fixture CSVs (schema documentation doubles here).

Run from this directory: python make_fixtures.py
"""

import numpy as np

rng = np.random.default_rng(20240817)


def write(name, header, rows):
    with open(name, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


# density_grid.csv, one spatial dimension
x = np.linspace(2.0, 10.0, 41)
rho_t = np.exp(-0.5 * (x - 6.0) ** 2) / np.sqrt(2 * np.pi)
rho_e = np.exp(-0.5 * (x - 5.9) ** 2 / 1.1) / np.sqrt(2 * np.pi * 1.1)
write("density_grid_1d.csv", ["x_1", "rho_empirical", "rho_target"],
      zip(x, rho_e, rho_t))

# density_grid.csv, two spatial dimensions (x_1-major rectangular grid)
g = np.linspace(3.5, 7.5, 21)
rows = []
for a in g:
    for b in g:
        rt = np.exp(-((a - 5.5) ** 2 + (b - 6.0) ** 2) / 0.5) / (0.5 * np.pi)
        re = np.exp(-((a - 5.45) ** 2 + (b - 6.1) ** 2) / 0.55) / (0.55 * np.pi)
        rows.append((a, b, re, rt))
write("density_grid_2d.csv", ["x_1", "x_2", "rho_empirical", "rho_target"], rows)

# loss.csv written by the penalized trainers
epochs = np.arange(30)
cost = 4.0 * np.exp(-epochs / 9.0) + 0.2 + 0.05 * rng.standard_normal(30)
pen = 60.0 * np.exp(-epochs / 5.0) + 1.0 + 0.5 * np.abs(rng.standard_normal(30))
write("loss.csv", ["epoch", "cost_part", "penalty_part", "total"],
      zip(epochs, cost, pen, cost + pen))

# loss_dual.csv written by the adversarial trainer
l1 = -20.0 + 15.0 * np.exp(-epochs / 7.0) + rng.standard_normal(30)
l2 = -l1 + 0.5 * rng.standard_normal(30)
write("loss_dual.csv", ["epoch", "l1", "l2"], zip(epochs, l1, l2))

# wasserstein_hist.csv: projection metric per random direction
k = 300
emp = rng.gamma(3.0, 2.4e-4, size=k)
base = rng.gamma(3.0, 2.0e-4, size=k)
write("wasserstein_hist.csv", ["direction", "empirical", "baseline"],
      zip(np.arange(k), emp, base))

# qq_margin_<i>.csv: sorted sample vs target quantiles
n = 250
q = 6.0 + np.sort(rng.standard_normal(n))
s = q + 0.05 * rng.standard_normal(n)
write("qq_margin_1.csv", ["sample_quantile", "target_quantile"],
      zip(np.sort(s), q))

# samples.csv: terminal sample cloud with three margins
cloud = rng.multivariate_normal([5.5, 6.0, 5.8],
                                0.15 * np.eye(3) + 0.1, size=500)
write("samples_3d.csv", ["x_1", "x_2", "x_3"], cloud)

print("fixtures written")
