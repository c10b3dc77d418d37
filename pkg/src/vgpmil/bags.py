"""Bag data model, patch-grid adjacency and the coupled covariance
``(lam * C + I)^{-1}`` for each bag."""
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import InputError

__all__ = [
    "Bag",
    "MilDataset",
    "adjacency_edges",
    "build_coupling",
    "coupled_covariance",
    "block_sigma",
]

_OFFSETS = {
    4: ((0, 1), (1, 0)),
    8: ((0, 1), (1, 0), (1, 1), (1, -1)),
}


@dataclass
class Bag:
    """One bag: instance features (n, D), grid coordinates (n, 2) or None,
    a binary bag label and optional ground-truth instance labels."""

    bag_id: str
    label: int
    X: np.ndarray
    coords: np.ndarray = None
    instance_labels: np.ndarray = None
    instance_ids: list = None

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=np.float64))
        n = self.X.shape[0]
        if n < 1:
            raise InputError(f"bag {self.bag_id!r} has no instances", component="bag-graph")
        if self.label not in (0, 1):
            raise InputError(f"bag {self.bag_id!r} label must be 0 or 1, got {self.label}",
                             component="bag-graph")
        self.label = int(self.label)
        if self.coords is not None:
            self.coords = np.asarray(self.coords, dtype=np.int64).reshape(n, 2)
            if len({tuple(rc) for rc in self.coords.tolist()}) != n:
                raise InputError(f"bag {self.bag_id!r} has duplicate grid coordinates",
                                 component="bag-graph")
        if self.instance_labels is not None:
            self.instance_labels = np.asarray(self.instance_labels, dtype=np.int64).reshape(n)
        if self.instance_ids is None:
            self.instance_ids = [str(i) for i in range(n)]
        elif len(self.instance_ids) != n:
            raise InputError(f"bag {self.bag_id!r}: {len(self.instance_ids)} ids for {n} instances",
                             component="bag-graph")

    def __len__(self):
        return self.X.shape[0]

    @property
    def has_coords(self):
        return self.coords is not None


@dataclass
class MilDataset:
    bags: list
    feature_dim: int = field(default=None)

    def __post_init__(self):
        if not self.bags:
            raise InputError("no bags", component="bag-graph")
        dims = {b.X.shape[1] for b in self.bags}
        if len(dims) != 1:
            raise InputError(f"inconsistent feature dimensions {sorted(dims)}", component="bag-graph")
        dim = dims.pop()
        if self.feature_dim is None:
            self.feature_dim = dim
        elif self.feature_dim != dim:
            raise InputError(f"feature_dim={self.feature_dim} but bags have {dim}",
                             component="bag-graph")
        ids = [b.bag_id for b in self.bags]
        if len(set(ids)) != len(ids):
            raise InputError("bag ids are not unique", component="bag-graph")
        for b in self.bags:
            if b.instance_labels is not None and int(b.instance_labels.max()) != b.label:
                raise InputError(
                    f"bag {b.bag_id!r}: bag label {b.label} is not the max of its instance labels",
                    component="bag-graph",
                )

    @property
    def n_instances(self):
        return sum(len(b) for b in self.bags)

    @property
    def labels(self):
        return np.array([b.label for b in self.bags], dtype=np.int64)

    @property
    def has_instance_labels(self):
        return all(b.instance_labels is not None for b in self.bags)

    @property
    def has_coords(self):
        return all(b.has_coords for b in self.bags)

    def stacked_X(self):
        return np.vstack([b.X for b in self.bags])

    def offsets(self):
        """Start index of every bag in the stacked instance order, plus N."""
        return np.concatenate([[0], np.cumsum([len(b) for b in self.bags])]).astype(np.int64)


def adjacency_edges(coords, neighborhood=4):
    """Index pairs (i, j), i < j, of contiguous patches on the grid."""
    if neighborhood not in _OFFSETS:
        raise InputError(f"neighborhood must be 4 or 8, got {neighborhood}", component="bag-graph")
    coords = np.asarray(coords, dtype=np.int64)
    where = {(int(r), int(c)): i for i, (r, c) in enumerate(coords)}
    edges = []
    for i, (r, c) in enumerate(coords.tolist()):
        for dr, dc in _OFFSETS[neighborhood]:
            j = where.get((r + dr, c + dc))
            if j is not None:
                edges.append((min(i, j), max(i, j)))
    return sorted(edges)


def build_coupling(bag, neighborhood=4):
    """Graph Laplacian of the patch contiguity graph (degree minus adjacency).

    ``m.T @ C @ m`` equals the sum of ``(m_i - m_j)**2`` over contiguous pairs.
    """
    n = len(bag)
    C = np.zeros((n, n))
    if not bag.has_coords:
        raise InputError(f"bag {bag.bag_id!r} has no grid coordinates", component="bag-graph")
    for i, j in adjacency_edges(bag.coords, neighborhood):
        C[i, j] -= 1.0
        C[j, i] -= 1.0
        C[i, i] += 1.0
        C[j, j] += 1.0
    return C


def coupled_covariance(C, lam):
    """``(lam * C + I)^{-1}``, explicitly symmetrized."""
    if lam < 0:
        raise InputError(f"lambda must be non-negative, got {lam}", component="bag-graph")
    n = C.shape[0]
    if lam == 0:
        return np.eye(n)
    factor = cho_factor(lam * C + np.eye(n), lower=True)
    S = cho_solve(factor, np.eye(n))
    return 0.5 * (S + S.T)


def bag_sigma(bag, lam, neighborhood=4):
    if lam == 0:
        return np.eye(len(bag))
    if not bag.has_coords:
        raise InputError(
            f"bag {bag.bag_id!r} has no grid coordinates; required when lambda > 0",
            component="bag-graph",
        )
    return coupled_covariance(build_coupling(bag, neighborhood), lam)


def block_sigma(dataset, lam, neighborhood=4):
    """Per-bag coupled covariances, in dataset bag order.

    The block-diagonal N x N matrix is never formed.
    """
    return [bag_sigma(b, lam, neighborhood) for b in dataset.bags]
