"""Density matrices, operator bases, the Cholesky parametrization and state metrics.

Density matrices are plain ``(2**n, 2**n)`` complex arrays and Cholesky
parameter vectors are plain real arrays of length ``4**n``.  Multi-qubit
indices ``mu`` are read as base-4 digit strings, most significant digit
first, so ``mu = 33`` on four qubits is the digit tuple ``(0, 2, 0, 1)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .linalg import check_allocation, herm_sqrt, hermitian_eig, kron, kron_all

SIGMA = np.array(
    [
        [[1, 0], [0, 1]],
        [[0, 1], [1, 0]],
        [[0, -1j], [1j, 0]],
        [[1, 0], [0, -1]],
    ],
    dtype=np.complex128,
)

PHYSICAL_TOL = 1e-9


class FileFormatError(ValueError):
    """A density-matrix or counts file could not be parsed."""


def num_qubits(rho: np.ndarray) -> int:
    d = np.shape(rho)[0]
    n = int(round(math.log2(d))) if d > 0 else -1
    if n < 1 or 2**n != d or np.shape(rho) != (d, d):
        raise ValueError(f"expected a 2**n x 2**n matrix, got shape {np.shape(rho)}")
    return n


def base4_digits(index: int, n: int) -> tuple[int, ...]:
    """Base-4 digits of ``index`` padded to ``n`` places, most significant first."""
    if not 0 <= index < 4**n:
        raise IndexError(f"index {index} out of range for {n} qubits (0..{4**n - 1})")
    digits = []
    for _ in range(n):
        index, r = divmod(index, 4)
        digits.append(r)
    return tuple(reversed(digits))


def check_density(rho: np.ndarray, physical: bool = True, tol: float = 1e-10) -> np.ndarray:
    """Validate a density matrix and return it as a complex array.

    Hermiticity and unit trace are always checked; with ``physical`` the
    smallest eigenvalue must also be at least ``-1e-9``.
    """
    rho = np.asarray(rho, dtype=np.complex128)
    num_qubits(rho)
    if not np.allclose(rho, rho.conj().T, rtol=0, atol=tol):
        raise ValueError("density matrix is not Hermitian")
    tr = np.trace(rho)
    if abs(tr - 1) > tol:
        raise ValueError(f"density matrix trace is {tr}, expected 1")
    if physical:
        lo = hermitian_eig(rho).eigenvalues[0]
        if lo < -PHYSICAL_TOL:
            raise ValueError(f"density matrix is not positive (min eigenvalue {lo:.3e})")
    return rho


def is_physical(rho: np.ndarray, tol: float = 1e-10) -> bool:
    try:
        check_density(rho, physical=True, tol=tol)
    except ValueError:
        return False
    return True


# ---------------------------------------------------------------- operator bases


@dataclass(frozen=True)
class ProjectorBasis:
    """Four single-qubit measurement operators, tensored across qubits."""

    projectors: np.ndarray
    name: str = "custom"

    def __post_init__(self):
        p = np.asarray(self.projectors, dtype=np.complex128)
        if p.shape != (4, 2, 2):
            raise ValueError(f"a projector basis needs shape (4, 2, 2), got {p.shape}")
        for k, m in enumerate(p):
            if not np.allclose(m, m.conj().T, atol=1e-12):
                raise ValueError(f"projector {k} is not Hermitian")
        p.setflags(write=False)
        object.__setattr__(self, "projectors", p)

    def __hash__(self):
        return hash((self.name, self.projectors.tobytes()))

    def __eq__(self, other):
        return (
            isinstance(other, ProjectorBasis)
            and self.name == other.name
            and np.array_equal(self.projectors, other.projectors)
        )


def _stokes() -> ProjectorBasis:
    ket0 = np.array([1, 0], dtype=np.complex128)
    ket1 = np.array([0, 1], dtype=np.complex128)
    dbar = (ket0 - ket1) / np.sqrt(2)
    r = (ket0 - 1j * ket1) / np.sqrt(2)
    return ProjectorBasis(
        np.array(
            [
                0.5 * np.eye(2),
                np.outer(ket0, ket0.conj()),
                np.outer(dbar, dbar.conj()),
                np.outer(r, r.conj()),
            ]
        ),
        name="stokes",
    )


STOKES = _stokes()


def gamma_operator(index_mu: int, n: int) -> np.ndarray:
    """Normalized n-qubit Pauli operator, ``Tr(G_mu G_nu) = delta_mu_nu``."""
    digits = base4_digits(index_mu, n)
    return kron_all(*(SIGMA[k] for k in digits)) / np.sqrt(2**n)


class ProjectorCache:
    """On-demand builder for tensor-product projectors ``Pi_nu``.

    Products of the leading ``prefix_depth`` single-qubit projectors are
    cached; the remaining factors are tensored on when a projector is
    requested, and the full ``2**n x 2**n`` matrix is never stored.
    """

    def __init__(self, basis: ProjectorBasis, n: int, prefix_depth: int | None = None):
        self.basis = basis
        self.n = n
        self.prefix_depth = min(n, 5) if prefix_depth is None else max(0, min(prefix_depth, n))
        self._prefixes = tensor_power_stack(basis.projectors, self.prefix_depth) if self.prefix_depth else None

    def __call__(self, index_nu: int) -> np.ndarray:
        digits = base4_digits(index_nu, self.n)
        check_allocation((2**self.n, 2**self.n), what="projector")
        p = self.prefix_depth
        if p:
            head_index = 0
            for k in digits[:p]:
                head_index = 4 * head_index + k
            out = self._prefixes[head_index]
        else:
            out = np.ones((1, 1), dtype=np.complex128)
        for k in digits[p:]:
            out = kron(out, self.basis.projectors[k])
        return out


def tensor_power_stack(single: np.ndarray, n: int) -> np.ndarray:
    """Stack of all n-fold tensor products of the four 2x2 operators in ``single``.

    Entry ``nu`` of the result is ``single[nu_1] (x) ... (x) single[nu_n]``.
    """
    check_allocation((4**n, 2**n, 2**n), what="operator stack")
    out = np.ones((1, 1, 1), dtype=np.complex128)
    for _ in range(n):
        m, d = out.shape[0], out.shape[1]
        out = np.einsum("aij,bkl->abikjl", out, single).reshape(4 * m, 2 * d, 2 * d)
    return out


def projector(index_nu: int, basis: ProjectorBasis, n: int) -> np.ndarray:
    return _cache_for(basis, n)(index_nu)


@lru_cache(maxsize=16)
def _cache_for(basis: ProjectorBasis, n: int) -> ProjectorCache:
    return ProjectorCache(basis, n)


# -------------------------------------------------------- Cholesky parametrization


@lru_cache(maxsize=None)
def _lower_positions(d: int) -> tuple[np.ndarray, np.ndarray]:
    rows, cols = np.tril_indices(d, k=-1)
    return rows, cols


def cholesky_matrix(t: np.ndarray) -> np.ndarray:
    """Lower-triangular ``T(t)``.

    Layout: ``t[:d]`` is the real diagonal; the rest fills the strict lower
    triangle row by row, left to right, one (real, imaginary) pair per entry.
    """
    t = np.asarray(t, dtype=np.float64)
    d = _dim_from_params(t)
    T = np.zeros((d, d), dtype=np.complex128)
    T[np.diag_indices(d)] = t[:d]
    rows, cols = _lower_positions(d)
    T[rows, cols] = t[d::2] + 1j * t[d + 1 :: 2]
    return T


def params_from_matrix(T: np.ndarray) -> np.ndarray:
    """Inverse of :func:`cholesky_matrix`: read parameters off a lower-triangular matrix.

    The imaginary part of the diagonal and the strict upper triangle are
    ignored.
    """
    T = np.asarray(T)
    d = T.shape[0]
    if T.shape != (d, d):
        raise ValueError(f"expected a square matrix, got {T.shape}")
    rows, cols = _lower_positions(d)
    t = np.empty(d * d)
    t[:d] = T[np.diag_indices(d)].real
    low = T[rows, cols]
    t[d::2] = low.real
    t[d + 1 :: 2] = low.imag
    return t


def _dim_from_params(t: np.ndarray) -> int:
    d = int(round(math.sqrt(t.size)))
    if t.ndim != 1 or d * d != t.size or d < 2 or d & (d - 1):
        raise ValueError(f"Cholesky parameter vector must have length 4**n, got {t.size}")
    return d


def rho_from_cholesky(t: np.ndarray) -> np.ndarray:
    """Physical density matrix ``T^dagger T / Tr(T^dagger T)``."""
    T = cholesky_matrix(t)
    norm = float(np.dot(t, t))
    if norm <= 0:
        raise ValueError("Cholesky parameters are all zero")
    rho = T.conj().T @ T / norm
    return 0.5 * (rho + rho.conj().T)


def cholesky_params_of(rho: np.ndarray, jitter: float = 1e-9) -> np.ndarray:
    """Parameters ``t`` with ``rho_from_cholesky(t)`` equal to the jittered input.

    The input is regularized as ``(rho + jitter*I) / (1 + jitter*2**n)``.  If
    factorization still fails the jitter escalates through 1e-6 and 1e-3
    before giving up.  The returned vector is scaled so ``sum(t**2) == 1``.
    """
    rho = np.asarray(rho, dtype=np.complex128)
    num_qubits(rho)
    rho = 0.5 * (rho + rho.conj().T)
    d = rho.shape[0]
    flip = np.eye(d)[::-1]
    tried = []
    for eps in [jitter] + [j for j in (1e-6, 1e-3) if j > jitter]:
        reg = (rho + eps * np.eye(d)) / (np.trace(rho).real + eps * d)
        try:
            L = np.linalg.cholesky(flip @ reg @ flip)
        except np.linalg.LinAlgError:
            tried.append(eps)
            continue
        # flip L flip is upper triangular U with reg = U U^dagger; T = U^dagger
        T = (flip @ L @ flip).conj().T
        t = params_from_matrix(T)
        return t / np.linalg.norm(t)
    raise np.linalg.LinAlgError(f"Cholesky factorization failed for jitter values {tried}")


# ------------------------------------------------------------------------ metrics


def fidelity(a: np.ndarray, b: np.ndarray) -> float:
    """Fidelity ``(Tr sqrt(sqrt(a) b sqrt(a)))**2`` between two physical states."""
    for name, m in (("first", a), ("second", b)):
        lo = hermitian_eig(m, tol=1e-8).eigenvalues[0]
        if lo < -1e-6:
            raise ValueError(f"{name} argument is not positive semidefinite (min eigenvalue {lo:.3e})")
    # Tr sqrt(sqrt(a) b sqrt(a)) is the nuclear norm of sqrt(a) sqrt(b); singular values
    # avoid taking square roots of round-off eigenvalues when the states are nearly pure
    sv = np.linalg.svd(herm_sqrt(a) @ herm_sqrt(b), compute_uv=False)
    f = float(np.sum(sv) ** 2)
    if not -1e-8 <= f <= 1 + 1e-8:
        raise ValueError(f"fidelity {f} outside [0, 1]; inputs are not normalized states")
    return min(max(f, 0.0), 1.0)


def purity(rho: np.ndarray) -> float:
    rho = np.asarray(rho)
    return float(np.real(np.vdot(rho.conj().T, rho)))


def linear_entropy(rho: np.ndarray) -> float:
    """Normalized linear entropy ``d/(d-1) * (1 - Tr rho**2)``: 0 when pure, 1 when maximally mixed."""
    d = np.shape(rho)[0]
    s = d / (d - 1) * (1.0 - purity(rho))
    return min(max(s, 0.0), 1.0)


_SPIN_FLIP = np.kron(SIGMA[2], SIGMA[2])


def tangle(rho: np.ndarray) -> float:
    """Two-qubit tangle (squared concurrence)."""
    rho = np.asarray(rho, dtype=np.complex128)
    if num_qubits(rho) != 2:
        raise ValueError("tangle is defined for two qubits only")
    lo = hermitian_eig(rho, tol=1e-8).eigenvalues[0]
    if lo < -1e-6:
        raise ValueError(f"input is not positive semidefinite (min eigenvalue {lo:.3e})")
    sr = herm_sqrt(rho)
    # the lambdas are the square roots of the eigenvalues of sqrt(rho) rho~ sqrt(rho), i.e. the
    # singular values of sqrt(rho) sqrt(rho~); the SVD route keeps round-off at machine precision
    # instead of sqrt(machine precision) on rank-deficient states
    lam = np.linalg.svd(sr @ _SPIN_FLIP @ sr.conj() @ _SPIN_FLIP, compute_uv=False)
    c = max(lam[0] - lam[1] - lam[2] - lam[3], 0.0)
    return min(c * c, 1.0)


@dataclass
class StateMetrics:
    fidelity: float
    linear_entropy: float
    tangle: float | None = field(default=None)


def state_metrics(estimate: np.ndarray, truth: np.ndarray) -> StateMetrics:
    n = num_qubits(estimate)
    return StateMetrics(
        fidelity=fidelity(estimate, truth),
        linear_entropy=linear_entropy(estimate),
        tangle=tangle(estimate) if n == 2 else None,
    )


# ------------------------------------------------------------------ serialization


def format_density(rho: np.ndarray) -> str:
    rho = np.asarray(rho, dtype=np.complex128)
    n = num_qubits(rho)
    lines = [f"n={n}"]
    for row in rho:
        lines.append(",".join(f"{z.real:.17g}{z.imag:+.17g}j" for z in row))
    return "\n".join(lines) + "\n"


def parse_density(text: str) -> np.ndarray:
    lines = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("n="):
        raise FileFormatError("density file must start with a 'n=<qubits>' header")
    try:
        n = int(lines[0][2:])
    except ValueError:
        raise FileFormatError(f"bad header {lines[0]!r}; expected 'n=<qubits>'") from None
    if n < 1:
        raise FileFormatError(f"qubit count must be positive, got {n}")
    d = 2**n
    if len(lines) - 1 != d:
        raise FileFormatError(f"density file for n={n} needs {d} rows, found {len(lines) - 1}")
    rho = np.empty((d, d), dtype=np.complex128)
    for i, line in enumerate(lines[1:]):
        fields = line.split(",")
        if len(fields) != d:
            raise FileFormatError(f"row {i + 1}: expected {d} entries, found {len(fields)}")
        try:
            rho[i] = [complex(f) for f in fields]
        except ValueError:
            raise FileFormatError(f"row {i + 1}: entries must be complex numbers like 0.5+0j") from None
    return rho


def save_density(path, rho: np.ndarray) -> None:
    Path(path).write_text(format_density(rho))


def load_density(path) -> np.ndarray:
    return parse_density(Path(path).read_text())
