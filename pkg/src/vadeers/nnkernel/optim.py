"""Adam optimizer acting on flat name -> array parameter stores."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..exceptions import ContractViolation

Params = dict[str, np.ndarray]


@dataclass
class AdamState:
    """First/second moment estimates plus the completed step count."""

    m: Params = field(default_factory=dict)
    v: Params = field(default_factory=dict)
    step_index: int = 0


def adam_step(
    params: Params,
    grads: Params,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    step_index: int | None = None,
) -> tuple[Params, AdamState]:
    """One Adam update with bias correction.

    Only parameters present in ``grads`` are touched; where a present
    gradient is zero the moments still decay but the value is unchanged.
    Returns fresh dicts; inputs are not mutated.
    """
    t = state.step_index + 1 if step_index is None else step_index
    if t < 1:
        raise ContractViolation(f"step_index must be >= 1, got {t}")

    new_params = dict(params)
    new_m = dict(state.m)
    new_v = dict(state.v)
    for name, g in grads.items():
        if name not in params:
            raise ContractViolation(f"gradient for unknown parameter {name!r}")
        p = params[name]
        if g.shape != p.shape:
            raise ContractViolation(
                f"gradient shape {g.shape} does not match parameter "
                f"{name!r} shape {p.shape}"
            )
        m = new_m.get(name)
        v = new_v.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        stepped = p - lr * m_hat / (np.sqrt(v_hat) + eps)
        # a zero gradient decays the moments but leaves the value alone
        new_params[name] = np.where(g == 0.0, p, stepped)
        new_m[name] = m
        new_v[name] = v

    return new_params, AdamState(m=new_m, v=new_v, step_index=t)
