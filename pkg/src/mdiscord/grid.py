"""Per-bin aggregates of a binned weak-measurement run."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .measurement_model import BinGrid
from .quantum_core import PAULI_MATRICES

DEFAULT_MIN_SHOTS = 50


@dataclass
class ConditionalGrid:
    """Shot counts, tomography counts and reconstructed states on an (I_m, Q_m) grid.

    ``pauli`` holds reconstructed Pauli vectors, shape (ni, nq, 16), and is only
    meaningful where ``reconstructed`` is True.
    """

    grid: BinGrid
    lam: float
    shot_counts: np.ndarray
    tomo_counts: np.ndarray
    pauli: np.ndarray | None = None
    reconstructed: np.ndarray | None = None
    failures: list[tuple[int, int, str]] = field(default_factory=list)

    def __post_init__(self):
        ni, nq = self.grid.shape
        self.shot_counts = np.asarray(self.shot_counts)
        if self.shot_counts.shape != (ni, nq):
            raise ValueError("shot_counts does not match grid shape")
        if self.tomo_counts.shape != (ni, nq, 9, 4):
            raise ValueError("tomo_counts must have shape (ni, nq, 9, 4)")
        if self.pauli is None:
            self.pauli = np.zeros((ni, nq, 16))
            self.pauli[..., 0] = 1.0
        if self.reconstructed is None:
            self.reconstructed = np.zeros((ni, nq), dtype=bool)

    @classmethod
    def from_states(cls, grid: BinGrid, lam: float, weights: np.ndarray, pauli: np.ndarray) -> "ConditionalGrid":
        """Grid with known bin states and weights (no tomography data)."""
        w = np.asarray(weights, dtype=float)
        ni, nq = grid.shape
        return cls(
            grid=grid,
            lam=lam,
            shot_counts=w,
            tomo_counts=np.zeros((ni, nq, 9, 4)),
            pauli=np.asarray(pauli, dtype=float),
            reconstructed=w > 0,
        )

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape

    @property
    def weights(self) -> np.ndarray:
        """Empirical P(I_m, Q_m), summing to 1."""
        tot = self.shot_counts.sum()
        return self.shot_counts / tot if tot > 0 else np.zeros(self.shape)

    @property
    def states(self) -> np.ndarray:
        return np.einsum("...k,kij->...ij", self.pauli, PAULI_MATRICES) / 4

    def used_weights(self) -> np.ndarray:
        """Shot weights restricted to reconstructed bins (unnormalised)."""
        return np.where(self.reconstructed, self.shot_counts, 0).astype(float)

    def with_pauli(self, pauli: np.ndarray, reconstructed: np.ndarray | None = None) -> "ConditionalGrid":
        return ConditionalGrid(
            grid=self.grid,
            lam=self.lam,
            shot_counts=self.shot_counts,
            tomo_counts=self.tomo_counts,
            pauli=pauli,
            reconstructed=self.reconstructed if reconstructed is None else reconstructed,
            failures=list(self.failures),
        )
