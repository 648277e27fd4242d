"""Edge-truncation analysis: squared-distance CDF, edge-count expectations,
empirical counts, and ideal-threshold extraction.

The analytic results assume pair midpoints are i.i.d. uniform on the square.
Midpoints of generated instances are only approximately uniform (the
receiver offset pulls them a little off the border), so empirical counts
from network instances are expected to track the formula within a couple of
percent, while the dedicated uniform-midpoint mode matches it tightly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError, ThresholdUnreachableError
from .netgen import ExperimentConfig, child_seed, sample_instance


def cdf_squared_distance(z, a: float):
    """CDF of the squared distance between two uniform points on an a x a square.

    Piecewise in z with a branch change at a^2; support is [0, 2 a^2].
    Accepts scalars or arrays.
    """
    if a <= 0:
        raise DomainError(f"square side must be > 0, got {a}")
    z = np.asarray(z, dtype=np.float64)
    if np.any(z < 0) or np.any(z > 2.0 * a * a):
        raise DomainError(f"z outside the support [0, {2.0 * a * a}]")
    a2 = a * a
    lo = np.minimum(z, a2)
    low = -(8.0 / (3.0 * a**3)) * lo**1.5 + np.pi * lo / a2 + lo * lo / (2.0 * a2 * a2)
    hi = np.maximum(z, a2)  # clamped into the second branch's domain
    with np.errstate(invalid="ignore"):
        high = (
            1.0 / 3.0
            - (2.0 + np.pi) / a2 * hi
            + (4.0 / a2) * (np.arcsin(a / np.sqrt(hi)) * hi + a * np.sqrt(hi - a2))
            + (8.0 / (3.0 * a**3)) * (hi - a2) ** 1.5
            - hi * hi / (2.0 * a2 * a2)
        )
    out = np.where(z <= a2, low, high)
    return float(out) if out.ndim == 0 else out


def expected_edges(t: float, num_vertices: int, a: float) -> float:
    """Expected surviving edge count V(V-1)/2 * F(t^2) at threshold t meters.

    t beyond the diagonal is clamped to the support edge (full retention).
    """
    if t < 0:
        raise DomainError(f"threshold must be >= 0, got {t}")
    if num_vertices < 1:
        raise DomainError(f"num_vertices must be >= 1, got {num_vertices}")
    z = min(t * t, 2.0 * a * a)
    total = num_vertices * (num_vertices - 1) / 2.0
    return total * cdf_squared_distance(z, a)


def _count_surviving(mid: np.ndarray, t: float, si_pairs: np.ndarray | None) -> int:
    diff = mid[:, None, :] - mid[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    iu, iv = np.triu_indices(mid.shape[0], 1)
    keep = d2[iu, iv] <= t * t
    if si_pairs is not None and si_pairs.size:
        keep &= ~(si_pairs[iu] == iv)
    return int(np.count_nonzero(keep))


def empirical_edges(
    cfg: ExperimentConfig,
    t: float,
    num_instances: int,
    seed: int,
    midpoint_mode: str = "netgen",
) -> float:
    """Mean surviving non-SI edge count under midpoint truncation at t meters.

    midpoint_mode "netgen" samples full network instances; "uniform" draws
    i.i.d. uniform midpoints, the exact regime of the analytic CDF.
    """
    if num_instances < 1:
        raise DomainError(f"num_instances must be >= 1, got {num_instances}")
    if midpoint_mode not in ("netgen", "uniform"):
        raise ConfigError(f"unknown midpoint_mode {midpoint_mode!r}")
    counts = np.empty(num_instances)
    if midpoint_mode == "uniform":
        rng = np.random.default_rng(seed)
        for i in range(num_instances):
            mid = rng.uniform(0.0, cfg.area_side, size=(cfg.num_links, 2))
            counts[i] = _count_surviving(mid, t, None)
    else:
        for i in range(num_instances):
            inst = sample_instance(cfg, child_seed(seed, i))
            counts[i] = _count_surviving(inst.midpoints(), t, inst.fd_partner)
    return float(counts.mean())


@dataclass
class ThresholdReport:
    """Per-threshold truncation summary produced by the sweep command."""

    thresholds: list            # meters
    analytic_expected_edges: list
    empirical_mean_edges: list
    normalized_performance: list  # achieved / WMMSE sum rate, per threshold
    training_time: list           # seconds

    def __post_init__(self):
        n = len(self.thresholds)
        for name in ("analytic_expected_edges", "empirical_mean_edges",
                     "normalized_performance", "training_time"):
            if len(getattr(self, name)) != n:
                raise ConfigError(f"{name} has length != {n}")


def ideal_threshold(report: ThresholdReport, target: float = 0.95) -> float:
    """Smallest listed threshold whose normalized performance reaches target.

    No interpolation between grid points.  Raises ThresholdUnreachableError
    when no listed threshold qualifies.
    """
    if not report.thresholds:
        raise ConfigError("empty threshold report")
    order = np.argsort(report.thresholds)
    for i in order:
        if report.normalized_performance[i] >= target:
            return float(report.thresholds[i])
    raise ThresholdUnreachableError(
        f"no threshold in {sorted(report.thresholds)} reaches {target:.0%} performance"
    )
