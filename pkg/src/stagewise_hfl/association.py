"""Client-to-edge association container shared by every solver."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ROLES = ("ground_truth", "plan_a", "plan_b")


@dataclass
class AssociationMatrix:
    """Binary client->edge assignment stored as one edge index per client.

    ``edge_of[i] == -1`` means client ``i`` is not selected. The dense 0/1
    matrix is available through :attr:`matrix`.
    """

    edge_of: np.ndarray
    n_edges: int
    role: str = "ground_truth"

    def __post_init__(self):
        self.edge_of = np.asarray(self.edge_of, dtype=np.int64).copy()
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        if ((self.edge_of < -1) | (self.edge_of >= self.n_edges)).any():
            raise ValueError("edge index out of range")

    @classmethod
    def empty(cls, n_clients: int, n_edges: int, role: str = "ground_truth"):
        return cls(np.full(n_clients, -1), n_edges, role)

    @classmethod
    def from_matrix(cls, matrix, role: str = "ground_truth"):
        """Build from a dense matrix; rows with several ones are rejected."""
        m = np.asarray(matrix).astype(bool)
        if (m.sum(axis=1) > 1).any():
            raise ValueError("a client is associated with more than one edge")
        edge_of = np.where(m.any(axis=1), m.argmax(axis=1), -1)
        return cls(edge_of, m.shape[1], role)

    @property
    def n_clients(self) -> int:
        return len(self.edge_of)

    @property
    def matrix(self) -> np.ndarray:
        out = np.zeros((self.n_clients, self.n_edges), dtype=np.int8)
        sel = self.edge_of >= 0
        out[np.flatnonzero(sel), self.edge_of[sel]] = 1
        return out

    @property
    def selected(self) -> np.ndarray:
        return self.edge_of >= 0

    def members(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.edge_of == j)

    def counts(self) -> np.ndarray:
        return np.bincount(self.edge_of[self.edge_of >= 0], minlength=self.n_edges)

    def masked(self, xi, role: str | None = None) -> "AssociationMatrix":
        """Drop clients whose participation indicator is 0."""
        edge_of = np.where(np.asarray(xi).astype(bool), self.edge_of, -1)
        return AssociationMatrix(edge_of, self.n_edges, role or self.role)

    def with_role(self, role: str) -> "AssociationMatrix":
        return AssociationMatrix(self.edge_of, self.n_edges, role)

    def __eq__(self, other):
        if not isinstance(other, AssociationMatrix):
            return NotImplemented
        return self.n_edges == other.n_edges and np.array_equal(self.edge_of, other.edge_of)

    def structural_violations(self, reach, capacity) -> list:
        """Reachability and capacity problems (uniqueness holds by construction)."""
        problems = []
        for i in np.flatnonzero(self.selected):
            if not reach[i, self.edge_of[i]]:
                problems.append(f"client {i} assigned to unreachable edge {self.edge_of[i]}")
        for j, c in enumerate(self.counts()):
            if c > capacity[j]:
                problems.append(f"edge {j} holds {c} clients > capacity {capacity[j]}")
        return problems


@dataclass
class SolverOutcome:
    assoc: AssociationMatrix
    objective: float
    feasible: bool
    stats: dict = field(default_factory=dict)
