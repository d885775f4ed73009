"""Bernoulli participation traces and the rolling-window probability estimator."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass
class ParticipationTrace:
    xi: np.ndarray  # (n_clients, rounds), 0/1
    seed: int | None = None

    def __post_init__(self):
        self.xi = np.asarray(self.xi).astype(np.int8)
        if self.xi.ndim != 2 or not np.isin(self.xi, (0, 1)).all():
            raise ValueError("participation trace must be a binary (clients x rounds) matrix")

    @property
    def n_clients(self) -> int:
        return self.xi.shape[0]

    @property
    def rounds(self) -> int:
        return self.xi.shape[1]

    def column(self, g: int) -> np.ndarray:
        return self.xi[:, g].astype(bool)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["round", "client_id", "xi"])
            for g in range(self.rounds):
                for i in range(self.n_clients):
                    w.writerow([g, i, int(self.xi[i, g])])

    @classmethod
    def from_csv(cls, path) -> "ParticipationTrace":
        rows = []
        with open(Path(path), newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                rows.append((int(row["round"]), int(row["client_id"]), int(row["xi"])))
        if not rows:
            raise ValueError(f"{path}: empty trace")
        g_max = max(r[0] for r in rows) + 1
        n = max(r[1] for r in rows) + 1
        xi = np.zeros((n, g_max), dtype=np.int8)
        for g, i, v in rows:
            xi[i, g] = v
        return cls(xi)


def sample_trace(online_prob, rounds: int, seed) -> ParticipationTrace:
    """Row i is i.i.d. Bernoulli(p_i) over ``rounds`` global rounds."""
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    p = np.asarray(online_prob, dtype=float)
    rng = np.random.default_rng(seed)
    return ParticipationTrace(rng.random((len(p), rounds)) < p[:, None], seed)


def window_weights(window_count: int) -> np.ndarray:
    """Linearly increasing weights kappa / sum(kappa); the last window is the freshest."""
    k = np.arange(1, window_count + 1, dtype=float)
    return 2.0 * k / (window_count * (window_count + 1))


def estimate_online_prob(history, window_len: int, window_count: int):
    """Weighted rolling-window estimate of the online probability.

    ``history`` holds observations oldest-first, either one client's vector or
    a (clients x rounds) matrix. Only the most recent ``window_len *
    window_count`` observations are used.
    """
    if window_len < 1 or window_count < 1:
        raise ValueError("window_len and window_count must be >= 1")
    h = np.asarray(history, dtype=float)
    need = window_len * window_count
    if h.shape[-1] < need:
        raise ValueError(f"history has {h.shape[-1]} observations, need {need}")
    recent = h[..., -need:]
    means = recent.reshape(*h.shape[:-1], window_count, window_len).mean(axis=-1)
    return means @ window_weights(window_count)
