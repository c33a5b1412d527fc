import numpy as np

from flownerf.diffcore.Tensor import as_tensor, concat, cos, sin


def encoded_width(num_frequencies, include_input=True):
    return (3 if include_input else 0) + 6 * num_frequencies


def encode(points, num_frequencies, include_input=True):
    """
    [p, sin(2^0 π p), cos(2^0 π p), ..., sin(2^(L-1) π p), cos(2^(L-1) π p)]
    along the last axis.
    """
    points = as_tensor(points)
    parts = [points] if include_input else []
    for k in range(num_frequencies):
        scaled = points * (np.pi * 2.0 ** k)
        parts.extend([sin(scaled), cos(scaled)])
    if not parts:
        return points * 0.0
    return concat(parts, axis=-1) if len(parts) > 1 else parts[0]
