"""Adam over the trainable parameter set, with per-parameter step counts.

Parameters that received no gradient in a step (the inactive task head) are
skipped entirely: no moment update, no parameter change, so their bytes stay
identical across gated steps.
"""

from __future__ import annotations

from typing import Dict

import numpy as np

from .checkpoint import OptimRecord
from .tensor import ContractError, Parameter


class Adam:
    def __init__(
        self,
        params: Dict[str, Parameter],
        lr: float = 5e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        frozen = [name for name, p in params.items() if not p.requires_grad]
        if frozen:
            raise ContractError(f"frozen parameters handed to the optimizer: {frozen[:5]}")
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.steps = {name: 0 for name in self.params}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self) -> None:
        for name, p in self.params.items():
            if p.grad is None:
                continue
            self.steps[name] += 1
            t = self.steps[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * p.grad
            v *= self.beta2
            v += (1 - self.beta2) * (p.grad * p.grad)
            m_hat = m / (1 - self.beta1**t)
            v_hat = v / (1 - self.beta2**t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state(self) -> Dict[str, OptimRecord]:
        return {
            name: OptimRecord(step=self.steps[name], m=self.m[name].copy(), v=self.v[name].copy())
            for name in self.params
        }

    def load_state(self, state: Dict[str, OptimRecord]) -> None:
        for name, record in state.items():
            if name not in self.params:
                continue
            self.steps[name] = record.step
            self.m[name] = record.m.copy()
            self.v[name] = record.v.copy()
