from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import GraphStateError
from .modules import Parameter


@dataclass
class OptimizerState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)


def adam_step(params: list[Parameter], state: OptimizerState) -> None:
    """One bias-corrected Adam update, in place on ``params``."""
    for i, p in enumerate(params):
        if p.grad is None:
            name = getattr(p, "name", "") or f"#{i}"
            raise GraphStateError(f"parameter {name} has no gradient; call backward() first")
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p.data) for p in params]
        state.second_moment = [np.zeros_like(p.data) for p in params]
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1 ** t
    correction2 = 1.0 - b2 ** t
    for p, m, v in zip(params, state.first_moment, state.second_moment):
        g = p.grad
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / correction1
        v_hat = v / correction2
        p.data -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)


class Adam:
    """Thin stateful wrapper around :func:`adam_step`."""

    def __init__(self, params, learning_rate=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.params = list(params)
        self.state = OptimizerState(learning_rate, beta1, beta2, epsilon)

    def step(self) -> None:
        adam_step(self.params, self.state)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
