"""Exact two-qubit state algebra.

Density matrices are plain ``(4, 4)`` complex numpy arrays in the basis
``|gg>, |ge>, |eg>, |ee>`` with the first letter belonging to Alice.  Pauli
vectors are real ``(16,)`` arrays ordered lexicographically by
``PAULI_LABELS`` (``II, IX, IY, IZ, XI, ..., ZZ``), first letter = Alice.

``|g>`` is the +1 eigenstate of Z.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

HERMITIAN_TOL = 1e-12
TRACE_TOL = 1e-12
PSD_FLOOR = -1e-10
ENTROPY_CLAMP = 1e-10
UNITARY_TOL = 1e-10

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
SINGLE_PAULIS = {"I": I2, "X": X, "Y": Y, "Z": Z}

PAULI_LABELS: tuple[str, ...] = tuple(a + b for a, b in product("IXYZ", repeat=2))
PAULI_INDEX = {label: k for k, label in enumerate(PAULI_LABELS)}
PAULI_MATRICES = np.array(
    [np.kron(SINGLE_PAULIS[a], SINGLE_PAULIS[b]) for a, b in PAULI_LABELS]
)

BASIS_LABELS = ("gg", "ge", "eg", "ee")


class InvalidStateError(ValueError):
    """Raised when a matrix violates the density-matrix invariants."""


def density_matrix_violations(rho: np.ndarray, dim: int = 4) -> list[str]:
    """Return a list of human-readable invariant violations (empty if valid)."""
    rho = np.asarray(rho)
    if rho.shape != (dim, dim):
        return [f"shape {rho.shape} != ({dim}, {dim})"]
    problems = []
    herm_err = np.max(np.abs(rho - rho.conj().T))
    if herm_err > HERMITIAN_TOL:
        problems.append(f"not Hermitian (max deviation {herm_err:.3g})")
    tr = np.trace(rho)
    if abs(tr - 1) > TRACE_TOL:
        problems.append(f"trace {tr:.12g} != 1")
    if not problems:
        lam_min = np.linalg.eigvalsh(rho).min()
        if lam_min < PSD_FLOOR:
            problems.append(f"negative eigenvalue {lam_min:.3g}")
    return problems


def is_density_matrix(rho: np.ndarray, dim: int = 4) -> bool:
    return not density_matrix_violations(rho, dim)


def check_density_matrix(rho: np.ndarray, dim: int = 4) -> np.ndarray:
    problems = density_matrix_violations(rho, dim)
    if problems:
        raise InvalidStateError("; ".join(problems))
    return np.asarray(rho, dtype=complex)


def pauli_expectations(rho: np.ndarray) -> np.ndarray:
    """Tr(rho sigma_k) for all 16 two-qubit Paulis.

    Accepts a single ``(4, 4)`` matrix or a stack ``(..., 4, 4)``.
    """
    rho = np.asarray(rho)
    # Tr(rho P) = sum_ij rho_ij P_ji
    return np.einsum("...ij,kji->...k", rho, PAULI_MATRICES).real


def state_from_pauli(pv: np.ndarray) -> np.ndarray:
    """Inverse Pauli expansion ``(1/4) sum_k c_k sigma_k``.

    The result is Hermitian with unit trace but is not guaranteed to be
    positive semidefinite.
    """
    pv = np.asarray(pv, dtype=float)
    if pv.shape[-1] != 16:
        raise ValueError("Pauli vector must have 16 components")
    if np.any(np.abs(pv[..., 0] - 1.0) > TRACE_TOL):
        raise ValueError("Pauli vector must have II component equal to 1")
    return np.einsum("...k,kij->...ij", pv, PAULI_MATRICES) / 4


def pauli_dict(pv: np.ndarray) -> dict[str, float]:
    return {label: float(v) for label, v in zip(PAULI_LABELS, pv)}


def von_neumann_entropy(rho: np.ndarray) -> float:
    """Entropy in bits; eigenvalues below 1e-10 are treated as zero."""
    w = np.linalg.eigvalsh(np.asarray(rho))
    w = w[w > ENTROPY_CLAMP]
    return float(-np.sum(w * np.log2(w)))


def binary_entropy(p: np.ndarray) -> np.ndarray:
    """h(p) in bits, elementwise, with 0 log 0 = 0."""
    p = np.clip(np.asarray(p, dtype=float), 0.0, 1.0)
    q = 1.0 - p
    with np.errstate(divide="ignore", invalid="ignore"):
        out = -np.where(p > 0, p * np.log2(p), 0.0) - np.where(q > 0, q * np.log2(q), 0.0)
    return out


def qubit_entropy_from_bloch(r: np.ndarray) -> np.ndarray:
    """Entropy of a one-qubit state with Bloch vector(s) ``r`` (last axis)."""
    norm = np.minimum(np.linalg.norm(r, axis=-1), 1.0)
    return binary_entropy((1 + norm) / 2)


def partial_trace(rho: np.ndarray, keep: str) -> np.ndarray:
    """Reduced state of Alice (``keep="A"``) or Bob (``keep="B"``)."""
    r = np.asarray(rho).reshape(2, 2, 2, 2)
    if keep == "A":
        return np.einsum("ijkj->ik", r)
    if keep == "B":
        return np.einsum("jijk->ik", r)
    raise ValueError(f"keep must be 'A' or 'B', got {keep!r}")


def is_unitary(u: np.ndarray, tol: float = UNITARY_TOL) -> bool:
    u = np.asarray(u)
    return u.shape[0] == u.shape[1] and np.allclose(u @ u.conj().T, np.eye(u.shape[0]), atol=tol, rtol=0)


def apply_local_unitary(rho: np.ndarray, ua: np.ndarray, ub: np.ndarray) -> np.ndarray:
    """(ua x ub) rho (ua x ub)^dagger for 2x2 unitaries ua (Alice), ub (Bob)."""
    if not (is_unitary(ua) and is_unitary(ub)):
        raise ValueError("local operations must be unitary to within 1e-10")
    u = np.kron(ua, ub)
    return u @ rho @ u.conj().T


def purity(rho: np.ndarray) -> np.ndarray:
    rho = np.asarray(rho)
    return np.einsum("...ij,...ji->...", rho, rho).real


def fidelity(rho: np.ndarray, sigma: np.ndarray) -> float:
    """Uhlmann fidelity (squared convention, 1 for identical states)."""
    w, v = np.linalg.eigh(rho)
    sqrt_rho = (v * np.sqrt(np.clip(w, 0, None))) @ v.conj().T
    m = sqrt_rho @ sigma @ sqrt_rho
    ev = np.clip(np.linalg.eigvalsh((m + m.conj().T) / 2), 0, None)
    return float(np.sum(np.sqrt(ev)) ** 2)


def psd_project(matrix: np.ndarray) -> np.ndarray:
    """Nearest unit-trace PSD matrix by eigenvalue clipping then renormalising."""
    m = (matrix + matrix.conj().T) / 2
    w, v = np.linalg.eigh(m)
    w = np.clip(w, 0, None)
    if w.sum() <= 0:
        return np.eye(m.shape[0], dtype=complex) / m.shape[0]
    w = w / w.sum()
    return (v * w) @ v.conj().T


def rx(theta: float) -> np.ndarray:
    return np.cos(theta / 2) * I2 - 1j * np.sin(theta / 2) * X


def ry(theta: float) -> np.ndarray:
    return np.cos(theta / 2) * I2 - 1j * np.sin(theta / 2) * Y


def rz(theta: float) -> np.ndarray:
    return np.cos(theta / 2) * I2 - 1j * np.sin(theta / 2) * Z


def ket(label: str) -> np.ndarray:
    """Product ket from single-qubit labels in ``g e + - +i -i``."""
    single = {
        "g": np.array([1, 0], dtype=complex),
        "e": np.array([0, 1], dtype=complex),
        "+": np.array([1, 1], dtype=complex) / np.sqrt(2),
        "-": np.array([1, -1], dtype=complex) / np.sqrt(2),
        "+i": np.array([1, 1j], dtype=complex) / np.sqrt(2),
        "-i": np.array([1, -1j], dtype=complex) / np.sqrt(2),
    }
    parts = label.split(",") if "," in label else list(label)
    out = np.array([1], dtype=complex)
    for p in parts:
        out = np.kron(out, single[p])
    return out


def projector(psi: np.ndarray) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    return np.outer(psi, psi.conj()) / np.vdot(psi, psi).real


@dataclass(frozen=True)
class BlochProjector:
    """Projective measurement {P+, P-} on one qubit along Bloch direction (theta, phi)."""

    theta: float
    phi: float

    @property
    def direction(self) -> np.ndarray:
        return np.array(
            [
                np.sin(self.theta) * np.cos(self.phi),
                np.sin(self.theta) * np.sin(self.phi),
                np.cos(self.theta),
            ]
        )

    def projectors(self) -> tuple[np.ndarray, np.ndarray]:
        n = self.direction
        ns = n[0] * X + n[1] * Y + n[2] * Z
        return (I2 + ns) / 2, (I2 - ns) / 2
