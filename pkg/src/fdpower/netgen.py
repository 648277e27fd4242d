"""Random D2D network generation and dataset persistence.

Transmitters are dropped uniformly in a square area and each receiver is
placed uniformly on an annulus around its transmitter (distance-uniform,
resampled until it lands inside the area).  A configurable fraction of the
links operate full-duplex: those links come in co-located bidirectional
device pairs, link 2i+1 being link 2i with endpoints swapped.  Channel
coefficients combine 1/sqrt(1+d^2) pathloss with unit-variance complex
Gaussian fading.

The channel matrix convention is H[j, k] = coefficient from transmitter j
into the receiver of link k, so H[k, k] is link k's direct channel.  The
two entries coupling a full-duplex pair are not propagation channels (the
"interferer" is the receiving device's own transmit chain); they are stored
as 0 and the corresponding distance entries carry the antenna separation.
Residual self-interference is modeled separately (see fdpower.phy).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from typing import Iterable

import numpy as np

from .errors import ConfigError, DatasetFormatError

DATASET_FORMAT = "fdpower-dataset"
DATASET_VERSION = 1

WEIGHT_MODES = ("uniform_one", "uniform_random")


@dataclass
class ExperimentConfig:
    """Scenario parameters for one family of random network instances."""

    num_links: int
    fd_fraction: float = 0.5
    area_side: float = 100.0
    min_pair_dist: float = 2.0
    max_pair_dist: float = 10.0
    si_eta: float = 0.01
    si_lambda: float = 0.5
    antenna_dist: float = 0.40
    noise_var: float = 1e-4
    p_max: float = 1.0
    weight_mode: str = "uniform_one"
    rng_seed: int = 0

    def validate(self) -> None:
        if self.num_links < 1:
            raise ConfigError(f"num_links must be >= 1, got {self.num_links}")
        if not 0.0 <= self.fd_fraction <= 1.0:
            raise ConfigError(f"fd_fraction must lie in [0, 1], got {self.fd_fraction}")
        if not 0.0 < self.min_pair_dist < self.max_pair_dist:
            raise ConfigError(
                f"need 0 < min_pair_dist < max_pair_dist, got "
                f"({self.min_pair_dist}, {self.max_pair_dist})"
            )
        if self.area_side <= self.max_pair_dist:
            raise ConfigError(
                f"degenerate area: area_side {self.area_side} must exceed "
                f"max_pair_dist {self.max_pair_dist}"
            )
        if self.si_eta < 0:
            raise ConfigError(f"si_eta must be >= 0, got {self.si_eta}")
        if not 0.0 <= self.si_lambda <= 1.0:
            raise ConfigError(f"si_lambda must lie in [0, 1], got {self.si_lambda}")
        if self.antenna_dist <= 0:
            raise ConfigError(f"antenna_dist must be > 0, got {self.antenna_dist}")
        if self.noise_var <= 0:
            raise ConfigError(f"noise_var must be > 0, got {self.noise_var}")
        if self.p_max <= 0:
            raise ConfigError(f"p_max must be > 0, got {self.p_max}")
        if self.weight_mode not in WEIGHT_MODES:
            raise ConfigError(
                f"weight_mode must be one of {WEIGHT_MODES}, got {self.weight_mode!r}"
            )

    def num_fd_links(self) -> int:
        """Number of full-duplex links.

        FD links pair up bidirectionally, so the count is rounded down to
        the nearest even integer (num_links * 0.5 = 25 at K = 50 yields 24
        FD links, i.e. 12 device pairs).
        """
        n = int(round(self.num_links * self.fd_fraction))
        return n - (n % 2)


@dataclass(eq=False)
class NetworkInstance:
    """One realization of a K-link network."""

    config: ExperimentConfig
    seed: int
    tx_pos: np.ndarray          # (K, 2) meters
    rx_pos: np.ndarray          # (K, 2) meters
    is_fd: np.ndarray           # (K,) bool
    fd_partner: np.ndarray      # (K,) int, -1 when half-duplex
    channel: np.ndarray         # (K, K) complex, H[j, k] = h from tx j into rx k
    dist: np.ndarray            # (K, K) meters, antenna_dist on FD-pair entries
    weights: np.ndarray         # (K,) in [0, 1]

    @property
    def num_links(self) -> int:
        return self.config.num_links

    def gain_matrix(self) -> np.ndarray:
        """|H|^2, the only channel statistic the rate expressions use."""
        g = np.abs(self.channel)
        return g * g

    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.tx_pos + self.rx_pos)

    def __eq__(self, other) -> bool:
        if not isinstance(other, NetworkInstance):
            return NotImplemented
        return (
            self.config == other.config
            and self.seed == other.seed
            and np.array_equal(self.tx_pos, other.tx_pos)
            and np.array_equal(self.rx_pos, other.rx_pos)
            and np.array_equal(self.is_fd, other.is_fd)
            and np.array_equal(self.fd_partner, other.fd_partner)
            and np.array_equal(self.channel, other.channel)
            and np.array_equal(self.dist, other.dist)
            and np.array_equal(self.weights, other.weights)
        )


def _place_receivers(rng: np.random.Generator, tx: np.ndarray, cfg: ExperimentConfig) -> np.ndarray:
    """Uniform-distance annulus placement, resampled until inside the area."""
    n = tx.shape[0]
    rx = np.empty_like(tx)
    pending = np.arange(n)
    while pending.size:
        d = rng.uniform(cfg.min_pair_dist, cfg.max_pair_dist, size=pending.size)
        theta = rng.uniform(0.0, 2.0 * np.pi, size=pending.size)
        cand = tx[pending] + np.stack([d * np.cos(theta), d * np.sin(theta)], axis=1)
        ok = np.all((cand >= 0.0) & (cand <= cfg.area_side), axis=1)
        rx[pending[ok]] = cand[ok]
        pending = pending[~ok]
    return rx


def sample_instance(cfg: ExperimentConfig, seed: int) -> NetworkInstance:
    """Draw one network realization; identical (cfg, seed) gives identical bits."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    k = cfg.num_links
    n_fd = cfg.num_fd_links()

    is_fd = np.zeros(k, dtype=bool)
    is_fd[:n_fd] = True
    fd_partner = np.full(k, -1, dtype=np.int64)
    even = np.arange(0, n_fd, 2)
    fd_partner[even] = even + 1
    fd_partner[even + 1] = even

    # Primary endpoints: FD pairs share one geometry (link 2i+1 is 2i reversed),
    # half-duplex links get their own.
    n_primary = n_fd // 2 + (k - n_fd)
    tx_primary = rng.uniform(0.0, cfg.area_side, size=(n_primary, 2))
    rx_primary = _place_receivers(rng, tx_primary, cfg)

    tx_pos = np.empty((k, 2))
    rx_pos = np.empty((k, 2))
    tx_pos[even] = tx_primary[: n_fd // 2]
    rx_pos[even] = rx_primary[: n_fd // 2]
    tx_pos[even + 1] = rx_primary[: n_fd // 2]
    rx_pos[even + 1] = tx_primary[: n_fd // 2]
    tx_pos[n_fd:] = tx_primary[n_fd // 2 :]
    rx_pos[n_fd:] = rx_primary[n_fd // 2 :]

    if cfg.weight_mode == "uniform_one":
        weights = np.ones(k)
    else:
        weights = rng.uniform(0.0, 1.0, size=k)

    dist = np.linalg.norm(tx_pos[:, None, :] - rx_pos[None, :, :], axis=2)
    fading = (rng.standard_normal((k, k)) + 1j * rng.standard_normal((k, k))) / np.sqrt(2.0)
    channel = np.sqrt(1.0 / (1.0 + dist * dist)) * fading

    # The coupling between partner links is the device's own transmit chain,
    # modeled by the self-interference variance, not by a propagation channel.
    fd_idx = np.flatnonzero(is_fd)
    if fd_idx.size:
        channel[fd_idx, fd_partner[fd_idx]] = 0.0
        dist[fd_idx, fd_partner[fd_idx]] = cfg.antenna_dist

    return NetworkInstance(
        config=cfg,
        seed=int(seed),
        tx_pos=tx_pos,
        rx_pos=rx_pos,
        is_fd=is_fd,
        fd_partner=fd_partner,
        channel=channel,
        dist=dist,
        weights=weights,
    )


def child_seed(base_seed: int, index: int) -> int:
    """Deterministic per-instance seed for dataset generation."""
    return int(np.random.SeedSequence((base_seed, index)).generate_state(2, np.uint64)[0])


def generate_dataset(cfg: ExperimentConfig, count: int, base_seed: int) -> list[NetworkInstance]:
    return [sample_instance(cfg, child_seed(base_seed, i)) for i in range(count)]


# ---------------------------------------------------------------------------
# Line-delimited dataset files.  First line is a header with the shared
# config, then one JSON object per instance.  json round-trips float64
# exactly (shortest repr, <= 17 significant digits).
# ---------------------------------------------------------------------------

def _instance_record(inst: NetworkInstance) -> dict:
    return {
        "seed": inst.seed,
        "K": inst.num_links,
        "is_fd": inst.is_fd.astype(int).tolist(),
        "fd_partner": [int(p) if p >= 0 else None for p in inst.fd_partner],
        "tx_pos": inst.tx_pos.tolist(),
        "rx_pos": inst.rx_pos.tolist(),
        "H_re": inst.channel.real.tolist(),
        "H_im": inst.channel.imag.tolist(),
        "weights": inst.weights.tolist(),
    }


def write_dataset(instances: Iterable[NetworkInstance], path) -> None:
    instances = list(instances)
    if not instances:
        raise ConfigError("refusing to write an empty dataset")
    cfg = instances[0].config
    for inst in instances:
        if inst.config != cfg:
            raise ConfigError("all instances in one dataset must share a config")
    with open(path, "w", encoding="utf-8") as fh:
        header = {
            "format": DATASET_FORMAT,
            "version": DATASET_VERSION,
            "count": len(instances),
            "config": asdict(cfg),
        }
        fh.write(json.dumps(header) + "\n")
        for inst in instances:
            fh.write(json.dumps(_instance_record(inst)) + "\n")


def _rebuild_instance(cfg: ExperimentConfig, rec: dict, index: int) -> NetworkInstance:
    try:
        k = int(rec["K"])
        tx_pos = np.asarray(rec["tx_pos"], dtype=np.float64)
        rx_pos = np.asarray(rec["rx_pos"], dtype=np.float64)
        is_fd = np.asarray(rec["is_fd"], dtype=np.int64).astype(bool)
        fd_partner = np.asarray(
            [-1 if p is None else int(p) for p in rec["fd_partner"]], dtype=np.int64
        )
        h_re = np.asarray(rec["H_re"], dtype=np.float64)
        h_im = np.asarray(rec["H_im"], dtype=np.float64)
        weights = np.asarray(rec["weights"], dtype=np.float64)
        seed = int(rec["seed"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetFormatError(index, f"bad instance record: {exc}") from exc
    if tx_pos.shape != (k, 2) or rx_pos.shape != (k, 2):
        raise DatasetFormatError(index, f"position arrays are not {k}x2")
    if h_re.shape != (k, k) or h_im.shape != (k, k):
        raise DatasetFormatError(index, f"channel matrix is not {k}x{k}")
    channel = h_re + 1j * h_im
    if is_fd.shape != (k,) or fd_partner.shape != (k,) or weights.shape != (k,):
        raise DatasetFormatError(index, "per-link arrays have inconsistent length")
    if k != cfg.num_links:
        raise DatasetFormatError(index, f"record K={k} disagrees with config K={cfg.num_links}")

    # Distances are derived data; rebuild them exactly as sample_instance does.
    dist = np.linalg.norm(tx_pos[:, None, :] - rx_pos[None, :, :], axis=2)
    fd_idx = np.flatnonzero(is_fd)
    if fd_idx.size:
        dist[fd_idx, fd_partner[fd_idx]] = cfg.antenna_dist

    return NetworkInstance(
        config=cfg,
        seed=seed,
        tx_pos=tx_pos,
        rx_pos=rx_pos,
        is_fd=is_fd,
        fd_partner=fd_partner,
        channel=channel,
        dist=dist,
        weights=weights,
    )


def read_dataset(path) -> list[NetworkInstance]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DatasetFormatError(0, "empty file, missing header")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(0, f"unparseable header: {exc}") from exc
    if not isinstance(header, dict) or header.get("format") != DATASET_FORMAT:
        raise DatasetFormatError(0, "not a dataset file (bad format marker)")
    if header.get("version") != DATASET_VERSION:
        raise DatasetFormatError(0, f"unsupported version {header.get('version')!r}")
    try:
        cfg = ExperimentConfig(**header["config"])
        cfg.validate()
    except (KeyError, TypeError, ConfigError) as exc:
        raise DatasetFormatError(0, f"bad config in header: {exc}") from exc

    instances = []
    for i, line in enumerate(lines[1:], start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(i, f"unparseable record: {exc}") from exc
        instances.append(_rebuild_instance(cfg, rec, i))
    if header.get("count") != len(instances):
        raise DatasetFormatError(
            len(instances), f"header promised {header.get('count')} records, found {len(instances)}"
        )
    return instances
