"""Stretching factors of the 2x2 worked example under three metrics.

Run: python3 demos/worked_example.py
"""

import numpy as np

from clrt.algorithm import metric_switch, optimal_metric, stretching_factor
from clrt.linalg import Metric, real_eigenbasis

F = np.array([[1.0, 1.0], [-4.0, 1.0]])

eye = Metric.identity(2)
opt = optimal_metric(F)
A = real_eigenbasis(F).A_hat

lam_eye = stretching_factor(F, eye, eye)
lam_opt = stretching_factor(F, opt, opt)
print("eigenvalues          ", np.linalg.eigvals(F))
print("Euclidean SF         ", f"{lam_eye:.4f}")
print("eigenbasis factor A  ", np.round(A, 4).tolist())
print("A F A^-1             ", np.round(A @ F @ np.linalg.inv(A), 6).tolist())
print("optimal-metric SF    ", f"{lam_opt:.4f}")
print("switch at c_m = 1.5? ", metric_switch(lam_eye, lam_opt, 1.5))
