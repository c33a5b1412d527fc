import logging

import numpy as np

from flownerf.diffcore.Tensor import Tensor, broadcast_to, concat, relu, sigmoid, softplus
from flownerf.exceptions.Exceptions import ArchitectureException, ShapeException
from flownerf.fields.Layers import Linear, Module
from flownerf.fields.encoding import encode, encoded_width

logger = logging.getLogger(__name__)


class GeometryField(Module):
    """
    World point + view direction -> (density, colour).

    ``depth`` ReLU hidden layers in total. The first ``skip`` run on the
    positional encoding; the next one takes their output concatenated with
    the encoding again and emits ``width - feature_dim`` channels, which are
    concatenated with the ``feature_dim``-wide canonical message (zeros when
    message passing is off). The remaining ``depth - skip - 1`` layers feed
    the density head and the view-dependent colour head.
    """

    def __init__(self, config, rng):
        width = config.geometry_width
        self.feature_dim = config.feature_dim
        self.pos_freqs = config.pos_freqs
        self.dir_freqs = config.dir_freqs
        if self.feature_dim >= width:
            raise ArchitectureException(
                f"Message width {self.feature_dim} must be smaller than the geometry width {width}"
            )
        enc = encoded_width(self.pos_freqs)
        dir_enc = encoded_width(self.dir_freqs)

        self.pre = [Linear(enc, width, rng)] + [Linear(width, width, rng) for _ in range(config.geometry_skip - 1)]
        self.skip_layer = Linear(width + enc, width - self.feature_dim, rng)
        self.post = [Linear(width, width, rng) for _ in range(config.geometry_depth - config.geometry_skip - 1)]
        self.sigma_head = Linear(width, 1, rng)
        self.feature = Linear(width, width, rng)
        self.color_hidden = Linear(width + dir_enc, width // 2, rng)
        self.color_head = Linear(width // 2, 3, rng)

    @property
    def hidden_layers(self):
        return len(self.pre) + 1 + len(self.post)

    def __call__(self, world_points, view_dirs, message=None):
        n, m = world_points.shape[:2]
        x = encode(world_points.reshape(n * m, 3), self.pos_freqs)
        h = x
        for layer in self.pre:
            h = relu(layer(h))
        h = relu(self.skip_layer(concat([h, x], axis=-1)))

        if message is None:
            message = Tensor(np.zeros((n * m, self.feature_dim)))
        else:
            if message.shape != (n, m, self.feature_dim):
                raise ShapeException(f"Message shape {message.shape} does not match {(n, m, self.feature_dim)}")
            message = message.reshape(n * m, self.feature_dim)
        h = concat([h, message], axis=-1)
        for layer in self.post:
            h = relu(layer(h))

        sigma = softplus(self.sigma_head(h)).reshape(n, m)
        dirs = encode(view_dirs, self.dir_freqs)
        width = dirs.shape[-1]
        dirs = broadcast_to(dirs.reshape(n, 1, width), (n, m, width)).reshape(n * m, width)
        color_in = concat([self.feature(h), dirs], axis=-1)
        color = sigmoid(self.color_head(relu(self.color_hidden(color_in)))).reshape(n, m, 3)
        return sigma, color
