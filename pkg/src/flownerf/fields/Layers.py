"""
Minimal module system over diffcore tensors: named parameters, dense layers
and the Gabor / sine activations.
"""

import numpy as np

from flownerf.diffcore.Tensor import Tensor, gabor


class Module:
    """Collects ``Tensor`` parameters from attributes, recursing into sub-modules"""

    def named_parameters(self, prefix=""):
        for key, value in self.__dict__.items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def fill_(self, value):
        """Overwrite every parameter with ``value`` (zero-weight baselines, tests)"""
        for p in self.parameters():
            p.values[...] = value
        return self


class Linear(Module):
    """y = x W + b with PyTorch-style uniform fan-in initialisation"""

    def __init__(self, in_features, out_features, rng, bias=True):
        self.in_features = in_features
        self.out_features = out_features
        bound = 1.0 / np.sqrt(in_features)
        self.weight = Tensor(rng.uniform(-bound, bound, (in_features, out_features)), requires_grad=True)
        self.bias = Tensor(rng.uniform(-bound, bound, out_features), requires_grad=True) if bias else None

    def __call__(self, x):
        out = x @ self.weight
        return out + self.bias if self.bias is not None else out


class GaborLinear(Module):
    """
    Dense layer followed by h(u) = exp(-γ u² / 2) · sin(ω u), with per-unit
    γ = softplus(γ_raw) > 0 and per-unit frequency ω ~ N(0, omega_std).
    ``envelope=False`` drops the Gaussian factor (plain sine activation).
    """

    def __init__(self, in_features, out_features, rng, omega_std=30.0, envelope=True):
        self.linear = Linear(in_features, out_features, rng)
        self.omega = Tensor(rng.normal(0.0, omega_std, out_features), requires_grad=True)
        self.envelope = envelope
        self.gamma_raw = Tensor(np.zeros(out_features), requires_grad=envelope)

    def __call__(self, x):
        u = self.linear(x)
        return gabor(u, self.omega, self.gamma_raw if self.envelope else None)


def gabor_layer(in_features, out_features, rng, config):
    return GaborLinear(
        in_features,
        out_features,
        rng,
        omega_std=config.gabor_omega_std,
        envelope=config.activation == "gabor",
    )
