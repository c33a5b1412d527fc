from flownerf.diffcore.Tensor import as_tensor


def message_pass(features, detach=False):
    """Canonical features handed to the geometry field; ``detach`` stops gradients reaching the canonical field"""
    features = as_tensor(features)
    return features.detach() if detach else features
