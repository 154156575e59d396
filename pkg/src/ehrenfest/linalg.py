"""Dense matrix exponential by scaling and squaring."""
from __future__ import annotations

import numpy as np

__all__ = ["expm", "expm_action"]


def expm(a, tol: float = 1e-14, max_terms: int = 60) -> np.ndarray:
    """Matrix exponential of a small dense matrix.

    The matrix is scaled by ``2**-s`` so that its 1-norm is at most 1/2,
    the Taylor series is summed until the next term falls below ``tol``
    relative to the partial sum, and the result is squared ``s`` times.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("expm needs a square matrix")
    n = a.shape[0]
    norm = np.abs(a).sum(axis=0).max() if n else 0.0
    s = 0
    if norm > 0.5:
        s = int(np.ceil(np.log2(norm / 0.5)))
    scaled = a / 2.0**s

    result = np.eye(n)
    term = np.eye(n)
    for k in range(1, max_terms + 1):
        term = term @ scaled / k
        result += term
        if np.abs(term).max() <= tol * max(np.abs(result).max(), 1.0):
            break
    for _ in range(s):
        result = result @ result
    return result


def expm_action(a, t: float, v) -> np.ndarray:
    """``exp(t * a) @ v``."""
    v = np.asarray(v, dtype=float)
    if t == 0:
        return v.copy()
    return expm(t * np.asarray(a, dtype=float)) @ v
