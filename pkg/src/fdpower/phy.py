"""Physical-layer math: self-interference variance, SINR, rates, objective.

Rates use log base 2 throughout.  For a full-duplex link k the receiving
device is itself transmitting (the partner link), so its residual
self-interference variance eta * p_partner^lambda joins the denominator.
The partner's channel entry in H is zero by construction (see netgen), so
the interference sum below never double-counts that path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeError
from .netgen import NetworkInstance

_INV_LN2 = 1.0 / np.log(2.0)


@dataclass
class SelfInterferenceSpec:
    """Residual self-interference model: variance = eta * p^lambda."""

    eta: float
    lam: float

    def __post_init__(self):
        if self.eta < 0:
            raise DomainError(f"eta must be >= 0, got {self.eta}")
        if not 0.0 <= self.lam <= 1.0:
            raise DomainError(f"lambda must lie in [0, 1], got {self.lam}")


def si_variance(p, spec: SelfInterferenceSpec):
    """Residual self-interference variance for transmit power p (watts).

    Accepts scalars or arrays.  0^lambda is 0 for lambda > 0; at lambda = 0
    the variance is the constant eta.
    """
    p = np.asarray(p, dtype=np.float64)
    if np.any(p < 0):
        raise DomainError("transmit power must be >= 0")
    out = spec.eta * np.power(p, spec.lam)
    return float(out) if out.ndim == 0 else out


def _check_powers(inst: NetworkInstance, p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (inst.num_links,):
        raise ShapeError(f"power vector shape {p.shape} != ({inst.num_links},)")
    if np.any(p < 0) or np.any(p > inst.config.p_max * (1 + 1e-12)):
        raise DomainError("power vector violates the [0, p_max] box constraint")
    return p


def self_interference(inst: NetworkInstance, p: np.ndarray) -> np.ndarray:
    """Per-link residual SI variance; zero on half-duplex links."""
    spec = SelfInterferenceSpec(inst.config.si_eta, inst.config.si_lambda)
    gamma2 = np.zeros(inst.num_links)
    fd = np.flatnonzero(inst.is_fd)
    if fd.size:
        gamma2[fd] = si_variance(p[inst.fd_partner[fd]], spec)
    return gamma2


def sinr(inst: NetworkInstance, p) -> np.ndarray:
    """Per-link SINR under power vector p."""
    p = _check_powers(inst, p)
    g = inst.gain_matrix()
    direct = np.diag(g) * p
    received = p @ g                      # total power arriving at each receiver
    interference = received - direct
    denom = interference + inst.config.noise_var + self_interference(inst, p)
    return direct / denom


def rates(inst: NetworkInstance, p) -> np.ndarray:
    """Achievable per-link rates log2(1 + SINR), bits/s/Hz."""
    return np.log1p(sinr(inst, p)) * _INV_LN2


def weighted_sum_rate(inst: NetworkInstance, p) -> float:
    """The optimization objective: sum_k w_k log2(1 + SINR_k)."""
    return float(inst.weights @ rates(inst, p))
