"""Pair-graph construction and distance-threshold edge truncation.

Each directional link is one vertex.  Vertex features are
(direct gain, weight, direct distance) with the antenna separation taking
the distance slot on full-duplex vertices.  Every unordered vertex pair
carries one edge: full-duplex partners get a self-interference edge with
features (gamma2(p_max), gamma2(p_max), d_ant, d_ant); every other pair gets
an interference edge (gain u->v, gain v->u, dist u->v, dist v->u) stored
from the lower-index endpoint's point of view.  Reading an edge from the
other side swaps entries 1<->2 and 3<->4 ("incoming interference first").
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .netgen import NetworkInstance
from .phy import SelfInterferenceSpec, si_variance


@dataclass(eq=False)
class PairGraph:
    """Graph over transceiver pairs; vertex count K, at most K(K-1)/2 edges."""

    num_vertices: int
    vertex_feat: np.ndarray    # (K, 3)
    edge_u: np.ndarray         # (E,) lower endpoint index
    edge_v: np.ndarray         # (E,) upper endpoint index
    edge_feat: np.ndarray      # (E, 4), oriented from edge_u's side
    is_si_edge: np.ndarray     # (E,) bool
    midpoint: np.ndarray       # (K, 2) meters
    adjacency: list            # per-vertex neighbor index arrays (ascending)
    area_side: float

    @property
    def num_edges(self) -> int:
        return int(self.edge_u.shape[0])

    def directed_edges(self):
        """Both orientations of every edge: (src, dst, features-for-dst).

        The returned feature rows are ordered so that the destination vertex
        sees incoming interference first, per the swap-on-read convention.
        """
        src = np.concatenate([self.edge_v, self.edge_u])
        dst = np.concatenate([self.edge_u, self.edge_v])
        swapped = self.edge_feat[:, [1, 0, 3, 2]]
        feat = np.concatenate([self.edge_feat, swapped], axis=0)
        return src, dst, feat


def _adjacency_lists(k: int, edge_u: np.ndarray, edge_v: np.ndarray) -> list:
    adj = [[] for _ in range(k)]
    for a, b in zip(edge_u.tolist(), edge_v.tolist()):
        adj[a].append(b)
        adj[b].append(a)
    return [np.asarray(sorted(n), dtype=np.int64) for n in adj]


def build_pair_graph(inst: NetworkInstance) -> PairGraph:
    cfg = inst.config
    k = inst.num_links
    g = inst.gain_matrix()
    d = inst.dist

    vertex_feat = np.column_stack([
        np.diag(g),
        inst.weights,
        np.where(inst.is_fd, cfg.antenna_dist, np.diag(d)),
    ])

    edge_u, edge_v = np.triu_indices(k, 1)
    # H[j, k] is tx j into rx k, so the interference u's transmitter causes
    # at v's receiver is g[u, v] over distance d[u, v].
    edge_feat = np.column_stack([
        g[edge_v, edge_u], g[edge_u, edge_v],
        d[edge_v, edge_u], d[edge_u, edge_v],
    ])
    is_si = inst.is_fd[edge_u] & (inst.fd_partner[edge_u] == edge_v)
    if np.any(is_si):
        gamma2_max = si_variance(cfg.p_max, SelfInterferenceSpec(cfg.si_eta, cfg.si_lambda))
        edge_feat[is_si] = (gamma2_max, gamma2_max, cfg.antenna_dist, cfg.antenna_dist)

    return PairGraph(
        num_vertices=k,
        vertex_feat=vertex_feat,
        edge_u=edge_u.astype(np.int64),
        edge_v=edge_v.astype(np.int64),
        edge_feat=edge_feat,
        is_si_edge=is_si,
        midpoint=inst.midpoints(),
        adjacency=_adjacency_lists(k, edge_u, edge_v),
        area_side=cfg.area_side,
    )


def permute_vertices(g: PairGraph, perm: np.ndarray) -> PairGraph:
    """Relabel vertices: old index v becomes perm[v].  Same graph, new names."""
    perm = np.asarray(perm, dtype=np.int64)
    if sorted(perm.tolist()) != list(range(g.num_vertices)):
        raise DomainError("perm must be a permutation of range(num_vertices)")
    inv = np.empty_like(perm)
    inv[perm] = np.arange(g.num_vertices)

    new_u = perm[g.edge_u]
    new_v = perm[g.edge_v]
    flip = new_u > new_v
    edge_feat = np.where(flip[:, None], g.edge_feat[:, [1, 0, 3, 2]], g.edge_feat)
    edge_u = np.where(flip, new_v, new_u)
    edge_v = np.where(flip, new_u, new_v)
    return PairGraph(
        num_vertices=g.num_vertices,
        vertex_feat=g.vertex_feat[inv],
        edge_u=edge_u,
        edge_v=edge_v,
        edge_feat=edge_feat,
        is_si_edge=g.is_si_edge.copy(),
        midpoint=g.midpoint[inv],
        adjacency=_adjacency_lists(g.num_vertices, edge_u, edge_v),
        area_side=g.area_side,
    )


def truncate_edges(g: PairGraph, t: float) -> PairGraph:
    """Drop interference edges whose midpoint separation exceeds t meters.

    Self-interference edges are never dropped (self-interference does not
    decay with the distance between different pairs).  Vertices are kept.
    """
    if t <= 0:
        raise DomainError(f"threshold must be > 0, got {t}")
    sep = np.linalg.norm(g.midpoint[g.edge_u] - g.midpoint[g.edge_v], axis=1)
    keep = (sep <= t) | g.is_si_edge
    return PairGraph(
        num_vertices=g.num_vertices,
        vertex_feat=g.vertex_feat,
        edge_u=g.edge_u[keep],
        edge_v=g.edge_v[keep],
        edge_feat=g.edge_feat[keep],
        is_si_edge=g.is_si_edge[keep],
        midpoint=g.midpoint,
        adjacency=_adjacency_lists(g.num_vertices, g.edge_u[keep], g.edge_v[keep]),
        area_side=g.area_side,
    )
