"""Pseudo-experimental data: state families, state error, Poisson-noised counts.

Every random draw goes through an explicit :class:`numpy.random.Generator`
obtained from :func:`rng_stream`, so a ``(seed, stream_id)`` pair fully fixes
the output of a trial.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .reconstruction import MeasurementRecord, expected_counts, save_counts
from .states import STOKES, ProjectorBasis, load_density

RNG_ALGORITHM = f"numpy-{np.__version__}/PCG64/SeedSequence(entropy=seed, spawn_key=(stream_id,))"
GENERATOR_VERSION = "qstomo-sim-1"

FAMILIES = ("ghz", "werner", "mems", "tangle_biased", "random", "file")


def rng_stream(seed: int, stream_id: int = 0) -> np.random.Generator:
    """Independent, reproducible generator for one trial."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream_id),))
    return np.random.Generator(np.random.PCG64(ss))


def _check_unit(name: str, x: float, hi: float = 1.0) -> None:
    if not 0.0 <= x <= hi + 1e-15:
        raise ValueError(f"{name}={x} outside [0, {hi}]")


def random_density(n: int, rng: np.random.Generator) -> np.ndarray:
    """``R^dagger R / Tr(R^dagger R)`` with real and imaginary parts of ``R`` uniform on (-1, 1)."""
    d = 2**n
    R = 2 * rng.random((d, d)) - 1 + 1j * (2 * rng.random((d, d)) - 1)
    rho = R.conj().T @ R
    rho = 0.5 * (rho + rho.conj().T)
    return rho / np.trace(rho).real


def ghz_ket(n: int) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be at least 1")
    v = np.zeros(2**n, dtype=np.complex128)
    v[0] = v[-1] = 1 / math.sqrt(2)
    return v


def ghz_state(n: int) -> np.ndarray:
    v = ghz_ket(n)
    return np.outer(v, v.conj())


def werner_state(n: int, epsilon: float) -> np.ndarray:
    """GHZ projector mixed with white noise: ``eps |GHZ><GHZ| + (1 - eps) I / 2**n``."""
    _check_unit("epsilon", epsilon)
    d = 2**n
    return epsilon * ghz_state(n) + (1 - epsilon) / d * np.eye(d)


def mems_state(gamma: float) -> np.ndarray:
    """Two-qubit maximally entangled mixed state along the MEMS boundary."""
    _check_unit("gamma", gamma)
    g = gamma / 2 if gamma >= 2 / 3 else 1 / 3
    rho = np.zeros((4, 4), dtype=np.complex128)
    rho[0, 0] = rho[3, 3] = g
    rho[1, 1] = 1 - 2 * g
    rho[0, 3] = rho[3, 0] = gamma / 2
    return rho


def tangle_biased_pure(delta: float, n: int = 2) -> np.ndarray:
    """Pure state ``sqrt(1 - delta**2)|0...0> + delta|1...1>``.

    For two qubits the tangle is ``4 delta**2 (1 - delta**2)``, reaching 1 at
    ``delta = 1/sqrt(2)``.  Larger ``n`` uses the same GHZ-like ket.
    """
    _check_unit("delta", delta, 1 / math.sqrt(2))
    v = np.zeros(2**n, dtype=np.complex128)
    v[0] = math.sqrt(1 - delta**2)
    v[-1] = delta
    return np.outer(v, v.conj())


def delta_for_tangle(tau: float) -> float:
    """Inverse of the two-qubit tangle ``4 delta**2 (1 - delta**2)`` on ``[0, 1/sqrt(2)]``."""
    _check_unit("tau", tau)
    return math.sqrt(max(0.0, (1 - math.sqrt(max(0.0, 1 - tau))) / 2))


def werner_epsilon_for_tangle(tau: float) -> float:
    """Two-qubit Werner mixing weight whose tangle is ``tau`` (concurrence ``(3 eps - 1)/2``)."""
    _check_unit("tau", tau)
    return (1 + 2 * math.sqrt(tau)) / 3


def make_physical(theory: np.ndarray, epsilon: float, rng: np.random.Generator) -> np.ndarray:
    """State error: ``(1 - eps) * theory + eps * random``."""
    _check_unit("epsilon", epsilon)
    n = int(round(math.log2(np.shape(theory)[0])))
    rand = random_density(n, rng)
    return (1 - epsilon) * np.asarray(theory) + epsilon * rand


def trial_mixture(structured: np.ndarray, epsilon: float, rng: np.random.Generator) -> np.ndarray:
    """Plane-filling mixture ``eps**2 * random + (1 - eps**2) * structured``."""
    _check_unit("epsilon", epsilon)
    n = int(round(math.log2(np.shape(structured)[0])))
    rand = random_density(n, rng)
    w = epsilon * epsilon
    return w * rand + (1 - w) * np.asarray(structured)


def poisson_sample(lam, rng: np.random.Generator):
    """Poisson draw(s) with mean ``lam`` (scalar or array); ``lam == 0`` gives 0."""
    lam = np.asarray(lam, dtype=np.float64)
    if np.any(lam < 0):
        raise ValueError("Poisson mean must be nonnegative")
    out = np.asarray(rng.poisson(lam))
    return int(out) if out.ndim == 0 else out


def simulate_counts(
    rho: np.ndarray,
    shots: float,
    rng: np.random.Generator | None,
    basis: ProjectorBasis = STOKES,
    zero_noise: bool = False,
) -> MeasurementRecord:
    """Expected counts, Poisson-noised unless ``zero_noise`` is set."""
    expected = expected_counts(rho, shots, basis)
    if zero_noise:
        return expected
    if rng is None:
        raise ValueError("a generator is required unless zero_noise is set")
    noisy = poisson_sample(expected.counts, rng).astype(np.float64)
    return MeasurementRecord(expected.qubits, shots, noisy, basis=basis.name)


@dataclass
class StateFamilySpec:
    family: str
    n: int = 2
    epsilon: float = 0.0
    delta: float = 0.0
    gamma: float = 0.0
    path: str | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown state family {self.family!r}; choose from {FAMILIES}")
        if self.n < 1:
            raise ValueError("n must be at least 1")
        _check_unit("epsilon", self.epsilon)
        _check_unit("delta", self.delta, 1 / math.sqrt(2))
        _check_unit("gamma", self.gamma)
        if self.family == "mems" and self.n != 2:
            raise ValueError("the MEMS family is two-qubit only")
        if self.family == "file" and not self.path:
            raise ValueError("the file family needs a density-matrix path")


def build_state(spec: StateFamilySpec, rng: np.random.Generator | None = None) -> np.ndarray:
    """The noiseless target state described by ``spec`` (no state error applied)."""
    if spec.family == "ghz":
        return ghz_state(spec.n)
    if spec.family == "werner":
        return werner_state(spec.n, spec.epsilon)
    if spec.family == "mems":
        return mems_state(spec.gamma)
    if spec.family == "tangle_biased":
        return tangle_biased_pure(spec.delta, spec.n)
    if spec.family == "random":
        if rng is None:
            raise ValueError("the random family needs a generator")
        return random_density(spec.n, rng)
    return load_density(spec.path)


def write_counts_with_metadata(path, record: MeasurementRecord, metadata: dict) -> None:
    """Write a counts file and a ``<path>.meta.json`` sidecar describing how it was made."""
    path = Path(path)
    save_counts(path, record)
    meta = {"generator_version": GENERATOR_VERSION, "rng": RNG_ALGORITHM, "shots": record.shots}
    meta.update(metadata)
    path.with_name(path.name + ".meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def spec_metadata(spec: StateFamilySpec) -> dict:
    return {k: v for k, v in asdict(spec).items() if v is not None}
