"""Dense complex matrix primitives shared by every estimator.

All functions take and return plain :class:`numpy.ndarray` objects.  The one
piece of state in this module is the memory budget, a process-wide cap on the
size of any single dense allocation made through :func:`kron` (and, by the
other modules, through :func:`check_allocation`).
"""
from __future__ import annotations

import contextlib
from typing import Iterator, NamedTuple

import numpy as np

DEFAULT_MEMORY_BUDGET = 2 * 1024**3

_budget = {"bytes": DEFAULT_MEMORY_BUDGET}


class MemoryBudgetError(MemoryError):
    """Raised when an allocation would exceed the configured memory budget."""


def memory_budget() -> int:
    return _budget["bytes"]


def set_memory_budget(nbytes: int) -> None:
    if nbytes <= 0:
        raise ValueError("memory budget must be positive")
    _budget["bytes"] = int(nbytes)


@contextlib.contextmanager
def memory_budget_scope(nbytes: int) -> Iterator[None]:
    """Temporarily replace the memory budget."""
    old = _budget["bytes"]
    set_memory_budget(nbytes)
    try:
        yield
    finally:
        _budget["bytes"] = old


def check_allocation(shape, dtype=np.complex128, what: str = "array") -> None:
    """Refuse an allocation of ``shape``/``dtype`` larger than the budget."""
    nbytes = int(np.prod(shape, dtype=np.float64)) * np.dtype(dtype).itemsize
    if nbytes > _budget["bytes"]:
        raise MemoryBudgetError(
            f"{what} of shape {tuple(shape)} needs {nbytes} bytes, "
            f"budget is {_budget['bytes']} bytes"
        )


class EigenDecomposition(NamedTuple):
    eigenvalues: np.ndarray  # ascending
    eigenvectors: np.ndarray  # columns match eigenvalues


def kron(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kronecker product ``a (x) b`` with a memory-budget guard.

    Entry ``(i1*b.rows + i2, j1*b.cols + j2)`` of the result is
    ``a[i1, j1] * b[i2, j2]``.
    """
    a = np.atleast_2d(np.asarray(a))
    b = np.atleast_2d(np.asarray(b))
    shape = (a.shape[0] * b.shape[0], a.shape[1] * b.shape[1])
    check_allocation(shape, np.result_type(a, b), "Kronecker product")
    return np.kron(a, b)


def kron_all(*mats: np.ndarray) -> np.ndarray:
    out = np.asarray(mats[0])
    for m in mats[1:]:
        out = kron(out, m)
    return out


def is_hermitian(h: np.ndarray, tol: float = 1e-10) -> bool:
    h = np.asarray(h)
    return h.ndim == 2 and h.shape[0] == h.shape[1] and bool(np.allclose(h, h.conj().T, rtol=0, atol=tol))


def hermitian_eig(h: np.ndarray, tol: float = 1e-10) -> EigenDecomposition:
    """Eigendecomposition of a Hermitian matrix, eigenvalues ascending.

    The input is symmetrized as ``(h + h^dagger)/2`` before decomposing so that
    round-off asymmetry below ``tol`` never leaks into complex eigenvalues.
    """
    h = np.asarray(h)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ValueError(f"hermitian_eig needs a square matrix, got shape {h.shape}")
    asym = np.max(np.abs(h - h.conj().T)) if h.size else 0.0
    if asym > tol * max(1.0, np.max(np.abs(h))):
        raise ValueError(f"matrix is not Hermitian (max asymmetry {asym:.3e})")
    h = 0.5 * (h + h.conj().T)
    try:
        w, v = np.linalg.eigh(h)
    except np.linalg.LinAlgError as exc:
        cond = np.linalg.cond(h)
        raise np.linalg.LinAlgError(
            f"Hermitian eigensolver did not converge (condition number {cond:.3e}, "
            f"max |entry| {np.max(np.abs(h)):.3e})"
        ) from exc
    return EigenDecomposition(w, v)


def trace_product(a: np.ndarray, b: np.ndarray) -> complex:
    """``Tr(a @ b)`` computed as ``sum_ij a[i, j] * b[j, i]`` without forming ``a @ b``."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0] or b.shape[1] != a.shape[0]:
        raise ValueError(f"trace_product shape mismatch: {a.shape} and {b.shape}")
    return complex(np.einsum("ij,ji->", a, b))


def herm_sqrt(h: np.ndarray) -> np.ndarray:
    """Square root of a positive semidefinite Hermitian matrix (negative round-off clipped)."""
    w, v = hermitian_eig(h)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.conj().T
