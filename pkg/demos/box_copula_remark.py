"""Copula given a box of the conditioning variable is not the average copula.

Under conditional independence with X_k | X3 = z ~ N(z, 1), the copula of
(X1, X2) given X3 <= 0 is not the independence copula: at u = (3/4, 3/4)
it equals 7/12 while the product is 9/16.
"""

import numpy as np

from condcop import DgpSpec, box_copula_oracle, simulate
from condcop.boxes import BoxPartition, box_cond_copula

model = DgpSpec("clayton", 20_000, tau_max=0.0)
u = np.array([0.75, 0.75])

exact = box_copula_oracle(model, u, box=(-np.inf, 0.0))
print(f"box copula by quadrature: {exact:.6f}  (7/12 = {7 / 12:.6f}, 9/16 = {9 / 16:.6f})")

data = simulate(model, seed=3)
part = BoxPartition((np.array([0.0]),), np.array([0.5, 0.5]))
est = box_cond_copula(data, part, 0, u)
print(f"empirical box copula:     {float(est):.6f}")
