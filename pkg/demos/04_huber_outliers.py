"""Robust regression with a globally valid Huber sparsifier.

Ten percent of the responses carry large errors.  Least squares is pulled
off the planted solution; the Huber fit, computed on the sparsified
objective, is not.
"""

import numpy as np

from glms import solve_huber
from glms.io import make_instance

A, b, truth = make_instance("outlier-regression", 2000, 4, seed=4)
x0 = np.array(truth["x0"])
x_ls = np.linalg.lstsq(A, b, rcond=None)[0]
rep = solve_huber(A, b, 0.2, seed=4)
print(f"outliers: {len(truth['outliers'])} of {A.shape[0]} rows")
print(f"least squares |x - x0| = {np.linalg.norm(x_ls - x0):.4f}")
print(f"huber         |x - x0| = {np.linalg.norm(rep.x - x0):.4f}")
print(f"sparsified objective {rep.sparse_F:.4f} vs full {rep.F:.4f}, "
      f"support {rep.support}, globalization resamples {rep.model.stats['resamples']}")
