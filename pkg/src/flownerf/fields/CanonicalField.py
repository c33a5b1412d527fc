import logging

from flownerf.diffcore.Tensor import sigmoid, softplus
from flownerf.fields.Layers import Linear, Module, gabor_layer

logger = logging.getLogger(__name__)


class CanonicalField(Module):
    """
    Canonical point -> (feature_dim features, canonical density).

    Three Gabor layers followed by a linear output of feature_dim + 1
    channels; the last channel is the density. With ``aux_rgb_from_flow`` an
    extra sigmoid head predicts colour from the same hidden state.
    """

    def __init__(self, config, rng):
        width = config.canonical_width
        self.feature_dim = config.feature_dim
        self.layers = [
            gabor_layer(3, width, rng, config),
            gabor_layer(width, width, rng, config),
            gabor_layer(width, width, rng, config),
        ]
        self.head = Linear(width, self.feature_dim + 1, rng)
        self.rgb_head = Linear(width, 3, rng) if config.aux_rgb_from_flow else None

    def __call__(self, canonical_points):
        n, m = canonical_points.shape[:2]
        h = canonical_points.reshape(n * m, 3)
        for layer in self.layers:
            h = layer(h)
        out = self.head(h)
        features = out[:, : self.feature_dim].reshape(n, m, self.feature_dim)
        sigma = softplus(out[:, self.feature_dim:]).reshape(n, m)
        rgb = None
        if self.rgb_head is not None:
            rgb = sigmoid(self.rgb_head(h)).reshape(n, m, 3)
        return features, sigma, rgb
