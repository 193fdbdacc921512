# tpgsr/engine/optim.py

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Tuple

import numpy as np

from .nn import Parameter


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Iterable[Tuple[str, Parameter]], state: AdamState) -> None:
    """Apply one bias-corrected Adam update to every parameter holding a gradient, then zero it.

    Frozen parameters (``requires_grad`` false, hence no grad buffer) are skipped.
    """
    state.step += 1
    t = state.step
    correction1 = 1.0 - state.beta1**t
    correction2 = 1.0 - state.beta2**t
    for name, param in params:
        if not param.requires_grad or param.grad is None:
            continue
        grad = param.grad
        m = state.first_moment.get(name)
        if m is None or m.shape != grad.shape:
            m = state.first_moment[name] = np.zeros_like(param.data)
            state.second_moment[name] = np.zeros_like(param.data)
        v = state.second_moment[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * grad * grad
        m_hat = m / correction1
        v_hat = v / correction2
        param.data -= (state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)).astype(param.dtype)
        param.grad.fill(0)


class Adam:
    def __init__(self, named_params: Iterable[Tuple[str, Parameter]], lr: float = 1e-3, beta2: float = 0.999):
        self.named_params: List[Tuple[str, Parameter]] = list(named_params)
        self.state = AdamState(lr=lr, beta2=beta2)

    @property
    def lr(self) -> float:
        return self.state.lr

    @lr.setter
    def lr(self, value: float):
        self.state.lr = value

    def step(self):
        adam_step(self.named_params, self.state)

    def zero_grad(self):
        for _, param in self.named_params:
            param.zero_grad()
