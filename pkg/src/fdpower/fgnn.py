"""Message-passing power allocator over pair graphs, trained unsupervised.

Each layer aggregates, for every vertex, an MLP of (neighbor embedding,
oriented edge features) summed over neighbors, then combines the aggregate
with the vertex's own embedding through a second MLP whose logistic output
scales to (0, p_max].  The embedding is (vertex features, current power),
initialized at full power.  The training loss is the batch-mean negative
weighted sum rate, differentiated end to end through the layers and the
SINR expressions (including the eta * p_partner^lambda self-interference
term of full-duplex links).

Neighbor sums run in a value-canonical order: directed edges are sorted per
destination by their static features before sequential accumulation, so
relabeling vertices permutes the output bitwise and training stays
reproducible.  Edges whose static features collide may break the bitwise
guarantee; generated instances never tie.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import MlpSpec, ParamStore, Var
from .errors import ConfigError, ShapeError, TrainingDivergedError
from .graphrep import PairGraph
from .netgen import NetworkInstance
from .phy import weighted_sum_rate

_INV_LN2 = 1.0 / np.log(2.0)

EMBED_DIM = 4    # 3 vertex features + current power
EDGE_DIM = 4


@dataclass
class FgnnConfig:
    num_mp_layers: int = 3
    fa_widths: tuple = (8, 16, 32)
    fc_widths: tuple = (36, 16, 1)
    share_weights_across_layers: bool = True
    batch_size: int = 64
    epochs: int = 20
    lr: float = 0.005
    scale_distances: bool = True
    early_stop_patience: int | None = 3

    def validate(self) -> None:
        if self.num_mp_layers < 1:
            raise ConfigError(f"num_mp_layers must be >= 1, got {self.num_mp_layers}")
        if self.fa_widths[0] != EMBED_DIM + EDGE_DIM:
            raise ConfigError(
                f"aggregator input width {self.fa_widths[0]} != "
                f"{EMBED_DIM + EDGE_DIM} (embedding + edge features)"
            )
        if self.fc_widths[0] != self.fa_widths[-1] + EMBED_DIM:
            raise ConfigError(
                f"combiner input width {self.fc_widths[0]} != "
                f"{self.fa_widths[-1] + EMBED_DIM} (aggregate + embedding)"
            )
        if self.fc_widths[-1] != 1:
            raise ConfigError("combiner must emit one power per vertex")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be >= 1")
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")

    def fa_spec(self) -> MlpSpec:
        return MlpSpec(self.fa_widths, output_activation="identity")

    def fc_spec(self) -> MlpSpec:
        return MlpSpec(self.fc_widths, output_activation="logistic")

    def layer_prefixes(self) -> list:
        if self.share_weights_across_layers:
            return [("fa", "fc")] * self.num_mp_layers
        return [(f"fa{i}", f"fc{i}") for i in range(self.num_mp_layers)]


def init_params(cfg: FgnnConfig, seed: int) -> ParamStore:
    cfg.validate()
    rng = np.random.default_rng(seed)
    params = {}
    for fa, fc in dict.fromkeys(cfg.layer_prefixes()):
        params.update(ad.init_mlp_params(cfg.fa_spec(), rng, fa))
        params.update(ad.init_mlp_params(cfg.fc_spec(), rng, fc))
    store = ParamStore(params=params)
    store.ensure_moments()
    return store


# ---------------------------------------------------------------------------
# Packing: one or more same-sized graphs flattened into shared arrays.
# ---------------------------------------------------------------------------

@dataclass
class PackedBatch:
    num_graphs: int
    verts_per_graph: int
    vfeat: np.ndarray          # (N, 3), distances scaled when configured
    src: np.ndarray            # (Et,) directed, canonical order
    dst: np.ndarray            # (Et,)
    efeat: np.ndarray          # (Et, 4) oriented toward dst
    p_max: float
    # physics, present only when instances were supplied
    gdiag: np.ndarray | None = None    # (B, K)
    goff: np.ndarray | None = None     # (B, K, K)
    weights: np.ndarray | None = None  # (B, K)
    partner_flat: np.ndarray | None = None  # (N,) flat index, self when HD
    fd_mask: np.ndarray | None = None  # (N, 1)
    noise_var: float = 0.0
    si_eta: float = 0.0
    si_lambda: float = 1.0

    @property
    def num_vertices(self) -> int:
        return self.num_graphs * self.verts_per_graph


def _scaled_features(g: PairGraph, scale: bool):
    vf = np.array(g.vertex_feat, dtype=np.float64)
    src, dst, ef = g.directed_edges()
    ef = np.array(ef, dtype=np.float64)
    if scale:
        vf[:, 2] /= g.area_side
        ef[:, 2:] /= g.area_side
    return vf, src, dst, ef


def pack_batch(items: list, cfg: FgnnConfig, p_max: float | None = None) -> PackedBatch:
    """Flatten [(instance-or-None, graph), ...] into one disjoint union.

    All graphs must have the same vertex count.  Physics arrays are filled
    only when every item carries an instance.
    """
    if not items:
        raise ShapeError("empty batch")
    graphs = [g for _, g in items]
    insts = [inst for inst, _ in items]
    k = graphs[0].num_vertices
    if any(g.num_vertices != k for g in graphs):
        raise ShapeError("all graphs in one batch must share the vertex count")
    b = len(graphs)

    vfeats, srcs, dsts, efeats = [], [], [], []
    for i, g in enumerate(graphs):
        vf, src, dst, ef = _scaled_features(g, cfg.scale_distances)
        vfeats.append(vf)
        srcs.append(src + i * k)
        dsts.append(dst + i * k)
        efeats.append(ef)
    vfeat = np.concatenate(vfeats, axis=0)
    src = np.concatenate(srcs)
    dst = np.concatenate(dsts)
    efeat = np.concatenate(efeats, axis=0)

    # Canonical per-destination order keyed on static features only, so the
    # accumulation sequence is invariant under vertex relabeling.
    if src.size:
        sv = vfeat[src]
        order = np.lexsort((efeat[:, 3], efeat[:, 2], efeat[:, 1], efeat[:, 0],
                            sv[:, 2], sv[:, 1], sv[:, 0], dst))
        src, dst, efeat = src[order], dst[order], efeat[order]

    packed = PackedBatch(
        num_graphs=b,
        verts_per_graph=k,
        vfeat=vfeat,
        src=src,
        dst=dst,
        efeat=efeat,
        p_max=insts[0].config.p_max if insts[0] is not None else (p_max if p_max is not None else 1.0),
    )

    if all(inst is not None for inst in insts):
        gains = np.stack([inst.gain_matrix() for inst in insts])
        gdiag = np.stack([np.diag(m) for m in gains])
        goff = gains.copy()
        step = k + 1
        goff.reshape(b, -1)[:, ::step] = 0.0
        partner = np.concatenate([
            np.where(inst.is_fd, inst.fd_partner, np.arange(k)) + i * k
            for i, inst in enumerate(insts)
        ])
        fd_mask = np.concatenate([inst.is_fd for inst in insts]).astype(np.float64)
        cfg0 = insts[0].config
        packed.gdiag = gdiag
        packed.goff = goff
        packed.weights = np.stack([inst.weights for inst in insts])
        packed.partner_flat = partner.astype(np.int64)
        packed.fd_mask = fd_mask[:, None]
        packed.noise_var = cfg0.noise_var
        packed.si_eta = cfg0.si_eta
        packed.si_lambda = cfg0.si_lambda
    return packed


# ---------------------------------------------------------------------------
# Forward passes: plain-numpy for inference, traced for training.
# ---------------------------------------------------------------------------

def _forward_arrays(packed: PackedBatch, params: dict, cfg: FgnnConfig) -> np.ndarray:
    n = packed.num_vertices
    fa_spec, fc_spec = cfg.fa_spec(), cfg.fc_spec()
    p = np.full((n, 1), packed.p_max)
    for fa, fc in cfg.layer_prefixes():
        m = np.concatenate([packed.vfeat, p], axis=1)
        x = np.concatenate([m[packed.src], packed.efeat], axis=1)
        h = ad.mlp_apply(fa_spec, params, x, fa)
        alpha = ad.segment_sum_np(h, packed.dst, n)
        y = np.concatenate([alpha, m], axis=1)
        p = packed.p_max * ad.mlp_apply(fc_spec, params, y, fc)
    return p[:, 0]


def _forward_traced(packed: PackedBatch, param_vars: dict, cfg: FgnnConfig) -> Var:
    n = packed.num_vertices
    fa_spec, fc_spec = cfg.fa_spec(), cfg.fc_spec()
    vfeat = Var(packed.vfeat)
    efeat = Var(packed.efeat)
    p = Var(np.full((n, 1), packed.p_max))
    for fa, fc in cfg.layer_prefixes():
        m = ad.concat_cols(vfeat, p)
        x = ad.concat_cols(ad.gather_rows(m, packed.src), efeat)
        h = ad.mlp_apply(fa_spec, param_vars, x, fa)
        alpha = ad.segment_sum(h, packed.dst, n)
        y = ad.concat_cols(alpha, m)
        p = packed.p_max * ad.mlp_apply(fc_spec, param_vars, y, fc)
    return p


def forward(g: PairGraph, store: ParamStore, cfg: FgnnConfig) -> np.ndarray:
    """Allocate powers for one graph; every entry lies in (0, p_max)."""
    cfg.validate()
    packed = pack_batch([(None, g)], cfg)
    return _forward_arrays(packed, store.params, cfg)


def _rates_traced(packed: PackedBatch, p: Var) -> Var:
    """Per-link rates (B, K) from flat powers (N, 1), traced."""
    b, k = packed.num_graphs, packed.verts_per_graph
    pmat = ad.reshape(p, (b, k))
    direct = Var(packed.gdiag) * pmat
    received = ad.reshape(ad.matmul(ad.reshape(pmat, (b, 1, k)), Var(packed.goff)), (b, k))
    gamma2 = packed.si_eta * ad.powc(ad.gather_rows(p, packed.partner_flat), packed.si_lambda)
    gamma2 = ad.reshape(gamma2 * Var(packed.fd_mask), (b, k))
    snr = direct / (received + packed.noise_var + gamma2)
    return ad.log1p(snr) * _INV_LN2


def loss(batch, param_vars: dict, cfg: FgnnConfig) -> Var:
    """Batch-mean negative weighted sum rate, differentiable in param_vars.

    batch is either a PackedBatch or a list of (instance, graph) pairs.
    """
    packed = batch if isinstance(batch, PackedBatch) else pack_batch(batch, cfg)
    if packed.goff is None:
        raise ShapeError("loss needs a batch packed with instances")
    p = _forward_traced(packed, param_vars, cfg)
    rates = _rates_traced(packed, p)
    wsum = ad.sum_all(Var(packed.weights) * rates)
    return wsum * (-1.0 / packed.num_graphs)


# ---------------------------------------------------------------------------
# Training and evaluation.
# ---------------------------------------------------------------------------

def _mean_sum_rate(data: list, store: ParamStore, cfg: FgnnConfig) -> float:
    total = 0.0
    for inst, g in data:
        total += weighted_sum_rate(inst, forward(g, store, cfg))
    return total / len(data)


def train(
    train_data: list,
    cfg: FgnnConfig,
    seed: int,
    val_data: list | None = None,
    log_path=None,
    init_store: ParamStore | None = None,
) -> ParamStore:
    """Unsupervised training over (instance, graph) pairs.

    Deterministic for fixed (seed, data order); batches are consecutive
    slices of train_data.  With val_data, the epoch-end validation ratio
    (mean sum rate over the WMMSE sum rate) drives plateau early stopping
    and the best-so-far parameters are returned.
    """
    cfg.validate()
    if not train_data:
        raise ConfigError("empty training set")
    store = init_store if init_store is not None else init_params(cfg, seed)

    wmmse_mean = None
    if val_data:
        from .baselines import wmmse

        wmmse_mean = float(np.mean([
            weighted_sum_rate(inst, wmmse(inst)) for inst, _ in val_data
        ]))

    batches = [
        pack_batch(train_data[i:i + cfg.batch_size], cfg)
        for i in range(0, len(train_data), cfg.batch_size)
    ]

    log_fh = open(log_path, "a", encoding="utf-8") if log_path else None
    best_ratio, best_store, stale = -np.inf, None, 0
    t0 = time.perf_counter()
    try:
        for epoch in range(cfg.epochs):
            epoch_loss = 0.0
            for step, packed in enumerate(batches):
                pvars = ad.make_param_vars(store)
                lv = loss(packed, pvars, cfg)
                lval = float(lv.value)
                if not np.isfinite(lval):
                    raise TrainingDivergedError(epoch, step, lval)
                lv.backward()
                ad.adam_step(store, {k: v.grad for k, v in pvars.items()}, cfg.lr)
                epoch_loss += lval
            epoch_loss /= len(batches)

            val_ratio = None
            if wmmse_mean is not None:
                val_ratio = _mean_sum_rate(val_data, store, cfg) / wmmse_mean
                if val_ratio > best_ratio + 1e-6:
                    best_ratio, best_store, stale = val_ratio, store.copy(), 0
                else:
                    stale += 1
            if log_fh:
                log_fh.write(json.dumps({
                    "epoch": epoch,
                    "mean_loss": epoch_loss,
                    "val_ratio": val_ratio,
                    "wall_time_s": time.perf_counter() - t0,
                }) + "\n")
                log_fh.flush()
            if (
                cfg.early_stop_patience is not None
                and wmmse_mean is not None
                and stale > cfg.early_stop_patience
            ):
                break
    finally:
        if log_fh:
            log_fh.close()
    return best_store if best_store is not None else store


@dataclass
class EvalReport:
    """Per-method sum rates on a test set, normalized against WMMSE."""

    num_instances: int
    per_instance_rates: dict = field(default_factory=dict)
    mean_sum_rate: dict = field(default_factory=dict)
    ratio_vs_wmmse: dict = field(default_factory=dict)


def evaluate(
    store: ParamStore,
    cfg: FgnnConfig,
    test_data: list,
    baseline_powers: dict,
) -> EvalReport:
    """Score the model and precomputed baseline powers on a test set.

    baseline_powers maps method name to one power vector per instance and
    must include "wmmse", the normalizer of the tables.
    """
    if not test_data:
        raise ConfigError("empty test set")
    if "wmmse" not in baseline_powers:
        raise ConfigError('baseline_powers must include "wmmse"')
    report = EvalReport(num_instances=len(test_data))
    report.per_instance_rates["fgnn"] = np.array([
        weighted_sum_rate(inst, forward(g, store, cfg)) for inst, g in test_data
    ])
    for method, powers in baseline_powers.items():
        if len(powers) != len(test_data):
            raise ShapeError(f"{method}: {len(powers)} power vectors for {len(test_data)} instances")
        report.per_instance_rates[method] = np.array([
            weighted_sum_rate(inst, p) for (inst, _), p in zip(test_data, powers)
        ])
    wmmse_mean = report.per_instance_rates["wmmse"].mean()
    for method, r in report.per_instance_rates.items():
        report.mean_sum_rate[method] = float(r.mean())
        report.ratio_vs_wmmse[method] = float(r.mean() / wmmse_mean)
    return report
