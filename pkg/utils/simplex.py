"""
Euclidean projection onto the probability simplex {x >= 0, Σx = 1}.

Sort-based, non-iterative (Wang & Carreira-Perpinan, 2013).
"""

import numpy as np


def project_to_simplex(v: np.ndarray) -> np.ndarray:
    """Project a vector onto the probability simplex."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    u_cumsum = np.cumsum(u)
    ranks = np.arange(1, v.size + 1)
    # rho = max{j | u_j + (1 - Σ_{i<=j} u_i)/j > 0}
    rho = int(np.nonzero(u + (1.0 - u_cumsum) / ranks > 0)[0][-1])
    shift = (1.0 - u_cumsum[rho]) / (rho + 1.0)
    return np.maximum(v + shift, 0.0)

