import numpy as np

from flownerf.diffcore.Tensor import Graph, no_grad


def numerical_gradient(fn, tensor, h=1e-6):
    """Central finite differences of scalar ``fn()`` w.r.t. ``tensor.values``"""
    grad = np.zeros_like(tensor.values)
    flat = tensor.values.reshape(-1)
    out = grad.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + h
            plus = fn().item()
            flat[i] = original - h
            minus = fn().item()
            flat[i] = original
            out[i] = (plus - minus) / (2.0 * h)
    return grad


def analytic_gradients(fn, tensors):
    for t in tensors:
        t.zero_grad()
    with Graph():
        loss = fn()
        loss.backward()
    return [np.zeros_like(t.values) if t.grad is None else t.grad.copy() for t in tensors]


def relative_error(analytic, numeric):
    """Max absolute difference over the larger of the two gradients' max magnitude"""
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-12)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def check_gradients(fn, tensors, h=1e-6):
    """Worst relative error between backward and finite differences over ``tensors``"""
    analytic = analytic_gradients(fn, tensors)
    worst = 0.0
    for t, a in zip(tensors, analytic):
        worst = max(worst, relative_error(a, numerical_gradient(fn, t, h)))
    return worst
