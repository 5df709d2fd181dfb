import math
from typing import Sequence

import numpy as np


def order_statistic_index(fraction: float, count: int) -> int:
    """Return the 1-based index ceil(fraction * count), clamped to [1, count]."""
    # Absorbs float noise such as 0.1 * 30 = 3.0000000000000004.
    idx = math.ceil(fraction * count - 1e-9)
    return min(max(idx, 1), count)


def order_statistic(values: Sequence[float] | np.ndarray, fraction: float) -> float:
    """Empirical quantile as the ceil order statistic, without interpolation."""
    arr = np.asarray(values, dtype=float)
    assert arr.ndim == 1 and arr.size > 0
    k = order_statistic_index(fraction, arr.size)
    return float(np.partition(arr, k - 1)[k - 1])


def format_number(value: object) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        if v == 0.0:
            # Avoids "-0" in the output.
            return "0"
        return format(v, ".9g")
    return str(value)


def truncate_message(text: str, char_limit: int = 200) -> str:
    text = " ".join(text.split())
    if len(text) > char_limit:
        return text[:char_limit] + "[...]"
    return text


def parse_float_list(text: str) -> list[float]:
    return [float(part) for part in text.split(",") if part.strip()]


def psd_sqrt(a: np.ndarray) -> np.ndarray:
    """Symmetric square root of a PSD matrix; negative rounding-level eigenvalues clip to 0."""
    a = np.asarray(a, dtype=float)
    vals, vecs = np.linalg.eigh(0.5 * (a + a.T))
    return (vecs * np.sqrt(np.maximum(vals, 0.0))) @ vecs.T


def operator_norm(a: np.ndarray) -> float:
    return float(np.linalg.norm(a, 2)) if np.size(a) else 0.0
