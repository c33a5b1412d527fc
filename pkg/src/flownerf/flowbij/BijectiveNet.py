"""
Pose-conditioned Real-NVP style bijection between a frame's camera space and
the shared canonical volume.
"""

import logging

import numpy as np

from flownerf.diffcore.Tensor import as_tensor, exp, relu, tanh
from flownerf.fields.Layers import Linear, Module

logger = logging.getLogger(__name__)

MAX_LOG_SCALE = 3.0

# (transformed axis, conditioning axes) per layer, cycled when there are more layers
MASK_SCHEDULE = [(2, (0, 1)), (0, (1, 2)), (1, (2, 0)), (2, (0, 1))]


class CouplingLayer(Module):
    """
    Affine coupling of one coordinate: x_k <- x_k · exp(s) + b, where
    (s, b) come from a three-layer MLP over the two other coordinates and the pose latent.

    The first dense layer acts on concat(context, latent); its weight is stored as
    two blocks so the latent contribution is computed once per frame and broadcast.
    """

    def __init__(self, target, context, width, latent_dim, rng):
        self.target = target
        self.context = context
        axes = np.eye(3)
        # constant column selectors and masks over the three coordinates
        self.pick_context = axes[:, list(context)]
        self.pick_target = axes[:, [target]]
        self.onehot = axes[target]
        self.keep = 1.0 - axes[target]
        self.hidden_context = Linear(2, width, rng)
        self.hidden_latent = Linear(latent_dim, width, rng, bias=False)
        self.hidden = Linear(width, width, rng)
        self.out = Linear(width, 2, rng)

    def scale_shift(self, x, psi):
        h = relu(self.hidden_context(x @ self.pick_context) + self.hidden_latent(psi))
        h = relu(self.hidden(h))
        o = self.out(h)
        s = tanh(o[:, 0:1]) * MAX_LOG_SCALE
        b = o[:, 1:2]
        return s, b

    def _replace(self, x, column):
        return x * self.keep + column * self.onehot

    def forward(self, x, psi):
        s, b = self.scale_shift(x, psi)
        return self._replace(x, (x @ self.pick_target) * exp(s) + b), s

    def inverse(self, y, psi):
        s, b = self.scale_shift(y, psi)
        return self._replace(y, ((y @ self.pick_target) - b) * exp(-s))


class BijectiveNet(Module):
    """Coupling layers shared by every frame, conditioned on the pose latent"""

    def __init__(self, config, rng, latent_dim=None):
        latent_dim = latent_dim or config.feature_dim
        self.layers = []
        for k in range(config.coupling_layers):
            target, context = MASK_SCHEDULE[k % len(MASK_SCHEDULE)]
            self.layers.append(CouplingLayer(target, context, config.coupling_width, latent_dim, rng))

    def forward(self, points, psi, return_log_det=False):
        points = as_tensor(points)
        shape = points.shape
        x = points.reshape(-1, 3)
        log_det = None
        for layer in self.layers:
            x, s = layer.forward(x, psi)
            log_det = s if log_det is None else log_det + s
        x = x.reshape(shape)
        if return_log_det:
            return x, log_det.reshape(shape[:-1])
        return x

    def inverse(self, points, psi):
        points = as_tensor(points)
        shape = points.shape
        y = points.reshape(-1, 3)
        for layer in reversed(self.layers):
            y = layer.inverse(y, psi)
        return y.reshape(shape)


def map_to_canonical(bijection, camera_points, psi_i):
    """Frame-i camera space -> canonical space"""
    return bijection.forward(camera_points, psi_i)


def map_from_canonical(bijection, canonical_points, psi_j):
    """Canonical space -> frame-j camera space, the inverse pass"""
    return bijection.inverse(canonical_points, psi_j)
