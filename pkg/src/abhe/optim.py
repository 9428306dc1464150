"""Adam optimizer with bias correction.

The learning rate is supplied per step so the trainer owns the schedule.
"""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor


def adam_step(param: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray,
              t: int, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8):
    """One in-place Adam update; ``t`` is the 1-based step count.

    Returns the updated (param, m, v) arrays (the same objects, mutated).
    """
    if grad.shape != param.shape or m.shape != param.shape or v.shape != param.shape:
        raise ShapeError(
            f"adam_step shape mismatch: param {param.shape}, grad {grad.shape}, "
            f"m {m.shape}, v {v.shape}"
        )
    one = param.dtype.type(1)
    b1 = param.dtype.type(beta1)
    b2 = param.dtype.type(beta2)
    m *= b1
    m += (one - b1) * grad
    v *= b2
    v += (one - b2) * grad * grad
    mhat = m / (one - b1 ** t)
    vhat = v / (one - b2 ** t)
    param -= param.dtype.type(lr) * mhat / (np.sqrt(vhat) + param.dtype.type(eps))
    return param, m, v


class Adam:
    """Adam over a name -> Tensor parameter mapping."""

    def __init__(self, params: dict, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = params
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, lr: float) -> None:
        """Apply one update using each parameter's ``.grad`` (None = skip)."""
        self.t += 1
        for name, p in self.params.items():
            if p.grad is None:
                continue
            adam_step(p.data, p.grad, self.m[name], self.v[name], self.t,
                      lr, self.beta1, self.beta2, self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_arrays(self) -> dict:
        """Moment estimates keyed for checkpointing."""
        out = {}
        for name in self.params:
            out[f"optim.m.{name}"] = self.m[name]
            out[f"optim.v.{name}"] = self.v[name]
        out["optim.t"] = np.array([float(self.t)], dtype=np.float32)
        return out

    def load_state_arrays(self, arrays: dict) -> None:
        for name in self.params:
            mk, vk = f"optim.m.{name}", f"optim.v.{name}"
            if mk in arrays:
                self.m[name] = arrays[mk].astype(self.m[name].dtype).reshape(self.m[name].shape)
            if vk in arrays:
                self.v[name] = arrays[vk].astype(self.v[name].dtype).reshape(self.v[name].shape)
        if "optim.t" in arrays:
            self.t = int(arrays["optim.t"][0])
