from flownerf.diffcore.Tensor import as_tensor, relu
from flownerf.fields.Layers import Linear, Module, gabor_layer


class PoseEmbedding(Module):
    """6-DoF pose vector -> pose latent; Gabor first layer, then two dense layers"""

    def __init__(self, config, rng, latent_dim=None):
        width = config.embed_width
        self.latent_dim = latent_dim or config.feature_dim
        self.first = gabor_layer(6, width, rng, config)
        self.hidden = Linear(width, width, rng)
        self.out = Linear(width, self.latent_dim, rng)

    def __call__(self, pose_vector):
        v = as_tensor(pose_vector).reshape(1, 6)
        return self.out(relu(self.hidden(self.first(v))))


def embed_pose(embedding, pose_vector):
    """Latent for one frame, shape (1, latent_dim); differentiable w.r.t. the pose"""
    return embedding(pose_vector)
