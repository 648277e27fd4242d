"""Classical power-allocation baselines: WMMSE and greedy top-L.

The WMMSE solver follows the standard scalar-channel block-coordinate
recipe: receiver gains u_k, MSE weights w_k, then amplitude updates v_k
clipped into [0, sqrt(p_max)], sweeping until the weighted sum rate moves
by less than rel_tol.  Full-duplex self-interference enters as extra noise
recomputed from the partner's power at the top of every sweep and held
fixed within it, which keeps each sweep an ordinary WMMSE step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError, NumericsError
from .netgen import NetworkInstance
from .phy import self_interference, weighted_sum_rate


@dataclass
class WmmseConfig:
    max_iters: int = 100
    rel_tol: float = 1e-5

    def validate(self) -> None:
        if self.max_iters < 1:
            raise ConfigError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.rel_tol <= 0:
            raise ConfigError(f"rel_tol must be > 0, got {self.rel_tol}")


def wmmse(
    inst: NetworkInstance,
    cfg: WmmseConfig | None = None,
    return_objectives: bool = False,
):
    """WMMSE power allocation; optionally also the per-sweep objectives."""
    cfg = cfg or WmmseConfig()
    cfg.validate()
    k = inst.num_links
    g = inst.gain_matrix()
    h_dir = np.sqrt(np.diag(g))
    w = inst.weights
    sqrt_pmax = np.sqrt(inst.config.p_max)

    v = np.full(k, sqrt_pmax)
    u = np.zeros(k)
    wt = np.zeros(k)
    objectives = []
    prev_obj = None
    for sweep in range(cfg.max_iters):
        # Quasi-static noise floor for this sweep.
        sigma_t = inst.config.noise_var + self_interference(inst, v * v)

        v2 = v * v
        for i in range(k):
            u[i] = h_dir[i] * v[i] / (g[:, i] @ v2 + sigma_t[i])
        for i in range(k):
            wt[i] = 1.0 / (1.0 - u[i] * h_dir[i] * v[i])
        coef = w * wt * u * u
        for i in range(k):
            v[i] = w[i] * wt[i] * u[i] * h_dir[i] / (g[i, :] @ coef)
        np.clip(v, 0.0, sqrt_pmax, out=v)

        if not np.all(np.isfinite(v)):
            raise NumericsError(f"non-finite WMMSE amplitude at sweep {sweep}")
        obj = weighted_sum_rate(inst, v * v)
        objectives.append(obj)
        if prev_obj is not None and abs(obj - prev_obj) < cfg.rel_tol * max(abs(prev_obj), 1e-12):
            break
        prev_obj = obj

    p = v * v
    if return_objectives:
        return p, objectives
    return p


def greedy_topL(inst: NetworkInstance, num_active: int) -> np.ndarray:
    """Full power to the num_active strongest direct links, zero elsewhere.

    Ties on the direct gain go to the lower link index.
    """
    k = inst.num_links
    if not 1 <= num_active <= k:
        raise DomainError(f"num_active must lie in [1, {k}], got {num_active}")
    direct = np.diag(inst.gain_matrix())
    winners = np.argsort(-direct, kind="stable")[:num_active]
    p = np.zeros(k)
    p[winners] = inst.config.p_max
    return p
