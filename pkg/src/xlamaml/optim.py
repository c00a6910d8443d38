"""Inner-loop SGD, AdamW with decoupled weight decay, and a linear LR schedule."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Node


@dataclass(frozen=True)
class SgdConfig:
    lr: float = 1e-5

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"SGD learning rate must be positive, got {self.lr}")


def sgd_functional_step(params: Mapping[str, Node], grads: Mapping[str, Node], lr: float) -> dict[str, Node]:
    """Return new nodes ``theta - lr * grad``; the input nodes are left untouched.

    When ``grads`` were built with ``create_graph=True`` the result stays
    differentiable with respect to the original parameters.
    """
    missing = [name for name in params if name not in grads]
    if missing:
        raise KeyError(f"sgd_functional_step: no gradient for {missing}")
    if lr == 0:
        return dict(params)
    return {name: ad.sub(p, ad.mul(grads[name], lr)) for name, p in params.items()}


@dataclass
class AdamWState:
    lr: float = 1e-5
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def to_json(self) -> dict:
        def pack(d):
            return {k: {"shape": list(a.shape), "data": a.ravel().tolist()} for k, a in sorted(d.items())}

        return {
            "lr": self.lr, "weight_decay": self.weight_decay, "beta1": self.beta1,
            "beta2": self.beta2, "eps": self.eps, "step": self.step,
            "m": pack(self.m), "v": pack(self.v),
        }

    @classmethod
    def from_json(cls, payload: dict) -> "AdamWState":
        def unpack(d):
            return {k: np.asarray(e["data"], dtype=np.float64).reshape(e["shape"]) for k, e in d.items()}

        fields = {k: payload[k] for k in ("lr", "weight_decay", "beta1", "beta2", "eps", "step")}
        return cls(**fields, m=unpack(payload["m"]), v=unpack(payload["v"]))


def adamw_step(state: AdamWState, params: dict[str, np.ndarray], grads: Mapping[str, np.ndarray], lr_t: float):
    """One bias-corrected Adam step plus decoupled decay, applied in place.

    theta <- theta - lr_t * m_hat / (sqrt(v_hat) + eps) - lr_t * weight_decay * theta
    """
    if lr_t < 0:
        raise ValueError("lr_t must be >= 0")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, theta in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(theta)
            state.v[name] = np.zeros_like(theta)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + state.eps)
        # decay uses the pre-update parameter value
        theta -= lr_t * update + lr_t * state.weight_decay * theta
    return params, state


def linear_lr(step: int, total_steps: int, base: float) -> float:
    """Linear decay from ``base`` at step 0 to 0 at ``total_steps`` (no warmup)."""
    if total_steps < 1:
        raise ValueError("total_steps must be >= 1")
    if step < 0:
        raise ValueError("step must be >= 0")
    return base * max(0.0, 1.0 - step / total_steps)
