"""Linear inversion of projector counts and the two cheap repair estimators.

The n-qubit count-to-coefficient matrix is the n-fold Kronecker power of a
4x4 single-qubit matrix, so it is never stored: inversion is applied one qubit
axis at a time on a ``(4,)*n`` tensor, and the density matrix is synthesized
from its Pauli coefficients the same way.  Peak auxiliary storage is a small
multiple of ``4**n`` scalars.
"""
from __future__ import annotations

import math
import tracemalloc
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .linalg import check_allocation, hermitian_eig
from .states import SIGMA, STOKES, FileFormatError, ProjectorBasis, base4_digits, num_qubits


@dataclass
class MeasurementRecord:
    """Counts for all ``4**n`` tensor-product projectors, ``shots`` repetitions each."""

    qubits: int
    shots: float
    counts: np.ndarray
    basis: str = "stokes"

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.float64)
        if self.qubits < 1:
            raise ValueError("qubits must be positive")
        if self.shots <= 0:
            raise ValueError("shots must be positive")
        if self.counts.shape != (4**self.qubits,):
            raise ValueError(
                f"{self.qubits} qubits need {4**self.qubits} counts, got {self.counts.size}"
            )
        if np.any(self.counts < 0) or not np.all(np.isfinite(self.counts)):
            raise ValueError("counts must be finite and nonnegative")


@dataclass(frozen=True)
class BetaMatrix:
    beta: np.ndarray
    beta_inverse: np.ndarray = field(repr=False)


@lru_cache(maxsize=32)
def beta_matrix(basis: ProjectorBasis = STOKES) -> BetaMatrix:
    """Single-qubit matrix ``beta[nu, mu] = Tr(Pi_nu sigma_mu)`` and its inverse."""
    traces = np.einsum("aij,bji->ab", basis.projectors, SIGMA)
    if np.max(np.abs(traces.imag)) > 1e-12:
        raise ValueError("projector/Pauli traces are not real; projectors must be Hermitian")
    beta = traces.real
    det = np.linalg.det(beta)
    if abs(det) < 1e-10:
        raise np.linalg.LinAlgError(
            f"beta matrix is singular (det {det:.3e}); the basis is not informationally complete"
        )
    return BetaMatrix(beta, np.linalg.inv(beta))


def b_inverse_element(nu: int, mu: int, beta: BetaMatrix, n: int) -> float:
    """One element of the inverse of the n-fold Kronecker power of ``beta``."""
    out = 1.0
    for a, b in zip(base4_digits(nu, n), base4_digits(mu, n)):
        out *= beta.beta_inverse[a, b]
    return out


def kron_power_apply(factor: np.ndarray, vec: np.ndarray, n: int) -> np.ndarray:
    """``(factor (x) ... (x) factor) @ vec`` for a 4x4 ``factor``, without forming the product."""
    x = np.asarray(vec).reshape((4,) * n)
    for axis in range(n):
        x = np.moveaxis(np.tensordot(factor, x, axes=([1], [axis])), 0, axis)
    return x.reshape(-1)


def pauli_synthesize(coeffs: np.ndarray, n: int) -> np.ndarray:
    """``sum_mu coeffs[mu] * sigma_mu1 (x) ... (x) sigma_mun`` as a dense matrix."""
    d = 2**n
    check_allocation((d, d), what="density matrix")
    x = np.asarray(coeffs, dtype=np.complex128).reshape((4,) * n)
    for _ in range(n):
        x = np.tensordot(x, SIGMA, axes=([0], [0]))
    # axes are now (i1, j1, ..., in, jn)
    order = list(range(0, 2 * n, 2)) + list(range(1, 2 * n, 2))
    return x.transpose(order).reshape(d, d)


def projector_traces(rho: np.ndarray, basis: ProjectorBasis = STOKES) -> np.ndarray:
    """``Tr(Pi_nu rho)`` for every tensor-product projector, in ascending ``nu``."""
    rho = np.asarray(rho, dtype=np.complex128)
    n = num_qubits(rho)
    x = rho.reshape((2,) * (2 * n))
    order = [a for k in range(n) for a in (k, n + k)]
    x = x.transpose(order)
    for _ in range(n):
        # contract (i_k, j_k) with Pi[nu, j, i]; nu lands at the end
        x = np.tensordot(x, basis.projectors, axes=([0, 1], [2, 1]))
    return x.reshape(-1).real


def expected_counts(rho: np.ndarray, shots: float, basis: ProjectorBasis = STOKES) -> MeasurementRecord:
    n = num_qubits(rho)
    counts = shots * projector_traces(rho, basis)
    return MeasurementRecord(n, shots, np.clip(counts, 0.0, shots), basis=basis.name)


def linear_coefficients(record: MeasurementRecord, basis: ProjectorBasis = STOKES) -> np.ndarray:
    """Coefficients ``r_nu`` of the normalized Pauli operators, ``rho = sum r_nu Gamma_nu``."""
    n = record.qubits
    beta = beta_matrix(basis)
    s = kron_power_apply(beta.beta_inverse, record.counts / record.shots, n)
    return math.sqrt(2**n) * s


def linear_reconstruct(record: MeasurementRecord, basis: ProjectorBasis = STOKES) -> np.ndarray:
    """Linear inversion of the counts.  Hermitian with unit trace, possibly not positive."""
    n = record.qubits
    r = linear_coefficients(record, basis)
    # the identity coefficient is fixed by Tr(rho) = 1; noisy counts only perturb it
    r[0] = 1.0 / math.sqrt(2**n)
    rho = pauli_synthesize(r / math.sqrt(2**n), n)
    return 0.5 * (rho + rho.conj().T)


def quick_and_dirty(rho_linear: np.ndarray) -> np.ndarray:
    """Zero the negative eigenvalues and renormalize the trace."""
    w, v = hermitian_eig(rho_linear, tol=1e-8)
    w = np.clip(w, 0.0, None)
    total = w.sum()
    if total <= 0:
        raise ValueError("all eigenvalues are nonpositive; cannot renormalize")
    rho = (v * (w / total)) @ v.conj().T
    return 0.5 * (rho + rho.conj().T)


def forced_purity(rho_linear: np.ndarray, tie_tol: float = 1e-12) -> np.ndarray:
    """Projector onto the eigenvector of the largest eigenvalue."""
    w, v = hermitian_eig(rho_linear, tol=1e-8)
    tied = np.flatnonzero(w >= w[-1] - tie_tol)
    if tied.size > 1:
        warnings.warn(
            f"largest eigenvalue is {tied.size}-fold degenerate; picking a vector deterministically",
            RuntimeWarning,
            stacklevel=2,
        )
        best = max(tied, key=lambda k: _leading_amplitude(v[:, k]))
        vec = v[:, best]
    else:
        vec = v[:, -1]
    return np.outer(vec, vec.conj())


def _leading_amplitude(vec: np.ndarray) -> float:
    nz = np.flatnonzero(np.abs(vec) > 1e-12)
    return float(np.abs(vec[nz[0]])) if nz.size else 0.0


def peak_auxiliary_bytes(func, *args, **kwargs) -> tuple[int, object]:
    """Run ``func`` under ``tracemalloc`` and report the peak bytes allocated during the call."""
    was_tracing = tracemalloc.is_tracing()
    if not was_tracing:
        tracemalloc.start()
    try:
        tracemalloc.reset_peak()
        start, _ = tracemalloc.get_traced_memory()
        result = func(*args, **kwargs)
        _, peak = tracemalloc.get_traced_memory()
    finally:
        if not was_tracing:
            tracemalloc.stop()
    return peak - start, result


# --------------------------------------------------------------------- counts IO


def format_counts(record: MeasurementRecord) -> str:
    n = record.qubits
    shots = _fmt_number(record.shots)
    lines = [f"qubits={n},shots={shots}"]
    for nu, c in enumerate(record.counts):
        label = "".join(str(k) for k in base4_digits(nu, n))
        lines.append(f"{label},{_fmt_number(c)}")
    return "\n".join(lines) + "\n"


def _fmt_number(x) -> str:
    x = float(x)
    return str(int(x)) if x.is_integer() else f"{x:.17g}"


def parse_counts(text: str) -> MeasurementRecord:
    lines = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
    if not lines:
        raise FileFormatError("counts file is empty")
    try:
        header = dict(item.split("=", 1) for item in lines[0].split(","))
        n = int(header["qubits"])
        shots = float(header["shots"])
    except (KeyError, ValueError) as exc:
        raise FileFormatError(f"line 1: bad header {lines[0]!r}, expected 'qubits=<n>,shots=<N>'") from exc
    expected = 4**n
    if len(lines) - 1 != expected:
        raise FileFormatError(
            f"counts file for qubits={n} needs {expected} count lines (4**{n}), found {len(lines) - 1}"
        )
    counts = np.empty(expected)
    for nu, line in enumerate(lines[1:]):
        lineno = nu + 2
        parts = line.split(",")
        if len(parts) != 2:
            raise FileFormatError(f"line {lineno}: expected '<nu_base4>,<count>', got {line!r}")
        label = "".join(str(k) for k in base4_digits(nu, n))
        if parts[0] != label:
            raise FileFormatError(f"line {lineno}: expected projector label {label}, got {parts[0]!r}")
        try:
            counts[nu] = float(parts[1])
        except ValueError as exc:
            raise FileFormatError(f"line {lineno}: count {parts[1]!r} is not a number") from exc
    return MeasurementRecord(n, shots, counts)


def save_counts(path, record: MeasurementRecord) -> None:
    Path(path).write_text(format_counts(record))


def load_counts(path) -> MeasurementRecord:
    return parse_counts(Path(path).read_text())
