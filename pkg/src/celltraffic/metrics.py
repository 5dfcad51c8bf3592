import numpy as np


def rmse(predicted, actual) -> float:
    """Root mean square error between two equal-length vectors."""
    p = np.asarray(predicted, dtype=np.float64).reshape(-1)
    a = np.asarray(actual, dtype=np.float64).reshape(-1)
    if p.size != a.size:
        raise ValueError(f"length mismatch: {p.size} predictions vs {a.size} actuals")
    if p.size == 0:
        raise ValueError("rmse of empty vectors is undefined")
    return float(np.sqrt(np.mean((p - a) ** 2)))
