"""
Quadrature of the volume rendering integral for the geometry branch.
"""

import logging
from dataclasses import dataclass

import numpy as np

from flownerf.diffcore.Tensor import Tensor, as_tensor, cumprod, exp
from flownerf.exceptions.Exceptions import ContractException

logger = logging.getLogger(__name__)


@dataclass
class RenderOutput:
    rgb: Tensor                  # (N, 3)
    depth: Tensor                # (N,) expected distance sum_k w_k z_k
    weights: Tensor              # (N, m)
    transmittance_tail: Tensor   # (N,)
    opacity: Tensor              # (N,) sum_k w_k


def sample_spacing(z_values, far):
    """δ_k = z_{k+1} - z_k, with the last interval closed by the far bound"""
    z = np.asarray(z_values, dtype=np.float64)
    if z.shape[-1] > 1 and not np.all(np.diff(z, axis=-1) > 0):
        raise ContractException("Sample distances must be strictly increasing along each ray")
    if not np.all(z[..., -1] <= far):
        raise ContractException(f"Sample distances exceed the far bound {far}")
    return np.concatenate([np.diff(z, axis=-1), far - z[..., -1:]], axis=-1)


def composite_weights(alpha):
    """w_k = T_k a_k with T_k = prod_{l<k} (1 - a_l); also returns the tail transmittance"""
    keep = 1.0 - alpha
    transmittance = cumprod(keep, axis=-1, exclusive=True)
    weights = transmittance * alpha
    m = alpha.shape[-1]
    tail = transmittance[..., m - 1] * keep[..., m - 1]
    return weights, tail


def render(sigma, color, z_values, far, white_background=False):
    """
    Discrete volume rendering along N rays of m samples.

    a_k = 1 - exp(-σ_k δ_k); Î = Σ T_k a_k c_k; D̂ = Σ T_k a_k z_k.
    """
    sigma = as_tensor(sigma)
    color = as_tensor(color)
    z = np.asarray(z_values, dtype=np.float64)
    if sigma.shape != z.shape or color.shape != z.shape + (3,):
        raise ContractException(
            f"render: sigma {sigma.shape}, color {color.shape} and z {z.shape} do not line up"
        )
    delta = Tensor(sample_spacing(z, far))
    alpha = 1.0 - exp(-(sigma * delta))
    weights, tail = composite_weights(alpha)
    rgb = (weights.reshape(*weights.shape, 1) * color).sum(axis=-2)
    if white_background:
        rgb = rgb + tail.reshape(*tail.shape, 1)
    depth = (weights * Tensor(z)).sum(axis=-1)
    return RenderOutput(rgb=rgb, depth=depth, weights=weights, transmittance_tail=tail, opacity=weights.sum(axis=-1))
