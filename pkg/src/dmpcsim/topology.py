"""Communication graph among followers and leader.

The follower graph is a directed graph with binary adjacency: ``a[i, j] = 1``
means agent ``i`` receives information from agent ``j``.  A binary pinning
vector marks followers that additionally receive the leader broadcast.
Derived matrices follow the usual Laplacian conventions: degree ``D`` with
``d_i = sum_j a_ij``, Laplacian ``L = D - A``, and their pinned variants
``D_B = D + diag(b)`` and ``L_B = L + diag(b)``.

Agents are indexed 1..N in neighbor sets, with 0 reserved for the leader.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    IsolatedAgent,
    NonSquareAdjacency,
    SelfLoopPresent,
    SingularPinnedDegree,
)


@dataclass(frozen=True)
class Topology:
    """Validated communication graph with derived spectral data.

    Attributes
    ----------
    follower_count : int
        Number of followers N.
    adjacency : (N, N) ndarray
        Binary adjacency among followers, zero diagonal.
    pinning : (N,) ndarray
        Binary vector; 1 where the follower hears the leader.
    degree, laplacian, pinned_degree, pinned_laplacian : (N, N) ndarray
        D, L = D - A, D_B = D + diag(pinning), L_B = L + diag(pinning).
    in_neighbors, out_neighbors : tuple of frozenset
        Per-follower follower-index sets (1-based agent ids).
    pinning_set : tuple of frozenset
        {0} for pinned followers, empty otherwise.
    pinned_in_neighbors : tuple of frozenset
        Union of in_neighbors and pinning_set; the information sources
        actually used by each agent's controller.
    """

    follower_count: int
    adjacency: np.ndarray
    pinning: np.ndarray
    degree: np.ndarray = field(repr=False)
    laplacian: np.ndarray = field(repr=False)
    pinned_degree: np.ndarray = field(repr=False)
    pinned_laplacian: np.ndarray = field(repr=False)
    in_neighbors: tuple[frozenset[int], ...]
    out_neighbors: tuple[frozenset[int], ...]
    pinning_set: tuple[frozenset[int], ...]
    pinned_in_neighbors: tuple[frozenset[int], ...]

    def source_count(self, agent: int) -> int:
        """Number of information sources |I_i| for 1-based follower id."""
        return len(self.pinned_in_neighbors[agent - 1])


def build_topology(adjacency, pinning) -> Topology:
    """Build and validate a :class:`Topology` from raw arrays.

    Raises
    ------
    NonSquareAdjacency
        If the adjacency is not square or the pinning length differs.
    SelfLoopPresent
        If any diagonal entry is nonzero.
    IsolatedAgent
        If some agent has no in-neighbor and no pin, which would make
        D_B singular.
    """
    adj = np.asarray(adjacency, dtype=float)
    pin = np.asarray(pinning, dtype=float).ravel()
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise NonSquareAdjacency(f"adjacency must be square, got shape {adj.shape}")
    n = adj.shape[0]
    if pin.shape[0] != n:
        raise NonSquareAdjacency(
            f"pinning length {pin.shape[0]} does not match follower count {n}"
        )
    if not np.isin(adj, (0.0, 1.0)).all():
        raise NonSquareAdjacency("adjacency entries must be 0 or 1")
    if not np.isin(pin, (0.0, 1.0)).all():
        raise NonSquareAdjacency("pinning entries must be 0 or 1")
    if np.any(np.diag(adj) != 0.0):
        raise SelfLoopPresent("adjacency diagonal must be zero")

    degree = np.diag(adj.sum(axis=1))
    laplacian = degree - adj
    pinned_degree = degree + np.diag(pin)
    pinned_laplacian = laplacian + np.diag(pin)

    sources = adj.sum(axis=1) + pin
    if np.any(sources < 1.0):
        bad = int(np.flatnonzero(sources < 1.0)[0]) + 1
        raise IsolatedAgent(f"agent {bad} has no in-neighbor and no leader pin")

    in_nb = tuple(
        frozenset(int(j) + 1 for j in np.flatnonzero(adj[i])) for i in range(n)
    )
    out_nb = tuple(
        frozenset(int(j) + 1 for j in np.flatnonzero(adj[:, i])) for i in range(n)
    )
    pin_set = tuple(
        frozenset((0,)) if pin[i] else frozenset() for i in range(n)
    )
    info = tuple(in_nb[i] | pin_set[i] for i in range(n))

    return Topology(
        follower_count=n,
        adjacency=adj,
        pinning=pin,
        degree=degree,
        laplacian=laplacian,
        pinned_degree=pinned_degree,
        pinned_laplacian=pinned_laplacian,
        in_neighbors=in_nb,
        out_neighbors=out_nb,
        pinning_set=pin_set,
        pinned_in_neighbors=info,
    )


def has_leader_rooted_spanning_tree(topology: Topology) -> bool:
    """True iff every follower is reachable from the leader.

    Information flows leader -> i when the pin bit is set and j -> i when
    a[i, j] = 1.  Breadth-first search from a virtual leader node.
    """
    n = topology.follower_count
    seen = [False] * n
    queue: deque[int] = deque(
        i for i in range(n) if topology.pinning[i]
    )
    for i in queue:
        seen[i] = True
    while queue:
        j = queue.popleft()
        # edges j -> i exist where a[i, j] = 1
        for i in np.flatnonzero(topology.adjacency[:, j]):
            if not seen[i]:
                seen[i] = True
                queue.append(int(i))
    return all(seen)


def spectral_radius_pinned(topology: Topology) -> float:
    """Spectral radius of D_B^{-1} A over the complex eigenvalues.

    Under the leader-reachability assumption this is < 1; callers must
    treat a value >= 1 as a configuration error.
    """
    db = np.diag(topology.pinned_degree)
    if np.any(db == 0.0):
        raise SingularPinnedDegree("pinned degree matrix is singular")
    m = topology.adjacency / db[:, None]
    eig = np.linalg.eigvals(m)
    return float(np.max(np.abs(eig))) if eig.size else 0.0


def normalized_pinned_laplacian(topology: Topology) -> np.ndarray:
    """D_B^{-1} L_B, the row-averaged pinned Laplacian."""
    db = np.diag(topology.pinned_degree)
    if np.any(db == 0.0):
        raise SingularPinnedDegree("pinned degree matrix is singular")
    return topology.pinned_laplacian / db[:, None]
