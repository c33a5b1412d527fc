"""
Adam with bias correction, applied per parameter group.
"""

import logging

import numpy as np

from flownerf.exceptions.Exceptions import ConfigException, ContractException, NumericException

logger = logging.getLogger(__name__)


def adam_step(params, lr, beta1, beta2, eps, t, state):
    """
    Update ``params`` (a list of (name, Tensor)) in place.

    Args:
        params: named parameters whose ``grad`` has been populated
        lr: learning rate, must be positive
        beta1, beta2: moment decay rates
        eps: denominator floor
        t: 1-based step count used for bias correction
        state: dict name -> {'m', 'v'} holding the moment buffers
    """
    if lr <= 0:
        raise ConfigException(f"Learning rate must be positive, got {lr}")
    if t < 1:
        raise ContractException(f"Adam step count must be >= 1, got {t}")

    correction1 = 1.0 - beta1 ** t
    correction2 = 1.0 - beta2 ** t
    for name, param in params:
        if param.grad is None:
            continue
        g = param.grad
        moments = state.get(name)
        if moments is None:
            moments = {"m": np.zeros_like(param.values), "v": np.zeros_like(param.values)}
            state[name] = moments
        moments["m"] = beta1 * moments["m"] + (1.0 - beta1) * g
        moments["v"] = beta2 * moments["v"] + (1.0 - beta2) * g * g
        m_hat = moments["m"] / correction1
        v_hat = moments["v"] / correction2
        denom = np.sqrt(v_hat) + eps
        update = np.divide(m_hat, denom, out=np.zeros_like(m_hat), where=denom > 0)
        param.values -= lr * update
        if not np.all(np.isfinite(param.values)):
            raise NumericException("adam", f"Non-finite parameter '{name}' after update")


class Adam:
    """
    Adam over named parameter groups.

    Each group is a dict with keys ``name``, ``params`` (list of (name,
    Tensor)) and ``lr``. Group learning rates can be scaled by the plateau
    scheduler between steps.
    """

    def __init__(self, groups, beta1=0.9, beta2=0.999, eps=1e-8):
        self.groups = groups
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.state = {}
        for group in groups:
            if group["lr"] <= 0:
                raise ConfigException(f"Learning rate for group '{group['name']}' must be positive")

    def step(self):
        self.t += 1
        for group in self.groups:
            adam_step(group["params"], group["lr"], self.beta1, self.beta2, self.eps, self.t, self.state)

    def zero_grad(self):
        for group in self.groups:
            for _, param in group["params"]:
                param.zero_grad()

    def learning_rates(self):
        return {group["name"]: group["lr"] for group in self.groups}

    def set_learning_rates(self, rates):
        for group in self.groups:
            group["lr"] = rates[group["name"]]

    def state_dict(self):
        return {
            "t": self.t,
            "lrs": self.learning_rates(),
            "moments": {name: dict(moments) for name, moments in self.state.items()},
        }

    def load_state_dict(self, saved):
        self.t = int(saved["t"])
        self.set_learning_rates(saved["lrs"])
        self.state = {
            name: {"m": np.array(m["m"], dtype=np.float64), "v": np.array(m["v"], dtype=np.float64)}
            for name, m in saved["moments"].items()
        }
