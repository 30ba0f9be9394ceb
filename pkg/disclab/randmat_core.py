"""
Raw material for the Monte-Carlo experiments: counter-based random streams,
immutable symmetric matrices, GOE sampling, eigensolves, operator norms,
signed sums and overlap-correlated pairs.
"""

import logging
import math
import struct
from typing import Iterable, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from disclab.errors import DimensionMismatchError, DomainError, NumericalError

logger = logging.getLogger(__name__)


class RngStream(BaseModel):
    """
    A reproducible random stream identified by (master seed, key path).

    The generator is Philox keyed by a SeedSequence whose spawn key is the
    path, so streams can be derived in any order and on any thread and still
    yield the same draws. Normals come from numpy's ziggurat transform.
    """

    model_config = ConfigDict(frozen=True)

    seed: int = Field(ge=0, lt=2**64)
    key: Tuple[int, ...] = ()

    def child(self, index: int) -> "RngStream":
        return RngStream(seed=self.seed, key=self.key + (int(index),))

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(self.seed, spawn_key=self.key)
        return np.random.Generator(np.random.Philox(seq))


RngLike = Union[RngStream, np.random.Generator]


def as_generator(rng: RngLike) -> np.random.Generator:
    """A fresh generator for a stream, or the generator itself"""
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected RngStream or numpy Generator, got {type(rng).__name__}")


class SymMatrix:
    """
    Dense real symmetric d×d matrix, immutable after construction.

    The upper triangle is authoritative: the lower triangle is always filled
    from it, so symmetry is exact.
    """

    __slots__ = ("_data",)

    def __init__(self, data: np.ndarray):
        a = np.array(data, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
            raise DimensionMismatchError(f"expected a square matrix, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise DomainError("matrix entries must be finite")
        upper = np.triu(a)
        a = upper + np.triu(a, 1).T
        a.setflags(write=False)
        self._data = a

    @classmethod
    def from_upper(cls, d: int, values: Sequence[float]) -> "SymMatrix":
        """Build from the row-major upper triangle (diagonal included)"""
        values = np.asarray(values, dtype=np.float64)
        if values.size != d * (d + 1) // 2:
            raise DimensionMismatchError(
                f"upper triangle of a {d}x{d} matrix has {d * (d + 1) // 2} entries, got {values.size}"
            )
        a = np.zeros((d, d))
        a[np.triu_indices(d)] = values
        return cls(a)

    @classmethod
    def _trusted(cls, a: np.ndarray) -> "SymMatrix":
        # Caller guarantees exact symmetry and finiteness
        obj = cls.__new__(cls)
        a = np.ascontiguousarray(a, dtype=np.float64)
        a.setflags(write=False)
        obj._data = a
        return obj

    @property
    def d(self) -> int:
        return self._data.shape[0]

    @property
    def array(self) -> np.ndarray:
        return self._data

    def upper_triangle(self) -> np.ndarray:
        return self._data[np.triu_indices(self.d)]

    def trace(self) -> float:
        return float(np.trace(self._data))

    def __add__(self, other: "SymMatrix") -> "SymMatrix":
        _check_same_dim(self, other)
        return SymMatrix._trusted(self._data + other._data)

    def __sub__(self, other: "SymMatrix") -> "SymMatrix":
        _check_same_dim(self, other)
        return SymMatrix._trusted(self._data - other._data)

    def __mul__(self, scalar: float) -> "SymMatrix":
        return SymMatrix._trusted(float(scalar) * self._data)

    __rmul__ = __mul__

    def __neg__(self) -> "SymMatrix":
        return SymMatrix._trusted(-self._data)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, SymMatrix) and np.array_equal(self._data, other._data)

    def __repr__(self) -> str:
        return f"SymMatrix(d={self.d})"

    def to_bytes(self) -> bytes:
        """d as little-endian uint64, then the row-major upper triangle as little-endian float64"""
        return struct.pack("<Q", self.d) + self.upper_triangle().astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, payload: bytes) -> Tuple["SymMatrix", int]:
        """Decode one matrix; returns it with the number of bytes consumed"""
        if len(payload) < 8:
            raise DomainError("truncated matrix header")
        (d,) = struct.unpack_from("<Q", payload, 0)
        count = d * (d + 1) // 2
        end = 8 + 8 * count
        if d < 1 or len(payload) < end:
            raise DomainError(f"truncated matrix body for d={d}")
        values = np.frombuffer(payload, dtype="<f8", count=count, offset=8)
        return cls.from_upper(int(d), values), end


def _check_same_dim(a: SymMatrix, b: SymMatrix) -> None:
    if a.d != b.d:
        raise DimensionMismatchError(f"dimension mismatch: {a.d} vs {b.d}")


class Signing:
    """A vector ε ∈ {±1}ⁿ"""

    __slots__ = ("_eps",)

    def __init__(self, eps: Iterable[int]):
        e = np.array(list(eps), dtype=np.int8)
        if e.ndim != 1 or e.size < 1:
            raise DomainError("a signing needs at least one entry")
        if not np.all((e == 1) | (e == -1)):
            raise DomainError("signing entries must be +1 or -1")
        e.setflags(write=False)
        self._eps = e

    @property
    def eps(self) -> np.ndarray:
        return self._eps

    def __len__(self) -> int:
        return self._eps.size

    def __neg__(self) -> "Signing":
        return Signing(-self._eps)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Signing) and np.array_equal(self._eps, other._eps)

    def __repr__(self) -> str:
        return "Signing(" + "".join("+" if v > 0 else "-" for v in self._eps) + ")"


def _goe_from_normals(g: np.ndarray, d: int) -> np.ndarray:
    # (G + Gᵀ)/√(2d): off-diagonal variance 1/d, diagonal 2/d
    return (g + np.swapaxes(g, -1, -2)) / math.sqrt(2.0 * d)


def sample_goe(d: int, rng: RngLike) -> SymMatrix:
    """Y_ij ~ N(0, (1 + δ_ij)/d) independently for i ≤ j"""
    if d < 1:
        raise DomainError(f"dimension must be >= 1, got {d}")
    g = as_generator(rng).standard_normal((d, d))
    return SymMatrix._trusted(_goe_from_normals(g, d))


def sample_goe_batch(d: int, size: int, rng: RngLike) -> np.ndarray:
    """`size` independent GOE(d) draws as a (size, d, d) array"""
    if d < 1 or size < 0:
        raise DomainError(f"invalid batch shape d={d}, size={size}")
    g = as_generator(rng).standard_normal((size, d, d))
    return _goe_from_normals(g, d)


def eigenvalues(M: SymMatrix, vectors: bool = False):
    """
    Ascending eigenvalues of M, with the orthonormal eigenvectors as columns
    when `vectors` is set.

    Raises:
        NumericalError: if LAPACK fails to converge
    """
    try:
        if vectors:
            return np.linalg.eigh(M.array)
        return np.linalg.eigvalsh(M.array)
    except np.linalg.LinAlgError as e:
        raise NumericalError(f"symmetric eigensolve failed at d={M.d}: {e}") from e


def batch_op_norms(stack: np.ndarray) -> np.ndarray:
    """Operator norms of a (size, d, d) stack of symmetric matrices"""
    try:
        lam = np.linalg.eigvalsh(stack)
    except np.linalg.LinAlgError as e:
        raise NumericalError(f"batched eigensolve failed: {e}") from e
    return np.maximum(np.abs(lam[..., 0]), np.abs(lam[..., -1]))


def op_norm(M: SymMatrix) -> float:
    """max(|λ_min|, |λ_max|)"""
    lam = eigenvalues(M)
    return float(max(abs(lam[0]), abs(lam[-1])))


def power_iteration(
    a: np.ndarray,
    v: np.ndarray,
    tol: float = 1e-10,
    max_iter: int = 20_000,
) -> Tuple[float, np.ndarray]:
    """
    Largest |λ| of the symmetric array `a` by power iteration from the unit
    vector `v`, stopping when ‖a v‖ changes by less than `tol` relative.

    Returns the norm and the final iterate, which warm-starts the next call
    on a nearby matrix.

    Raises:
        NumericalError: if `max_iter` is reached
    """
    estimate = 0.0
    for _ in range(max_iter):
        w = a @ v
        norm = float(np.linalg.norm(w))
        if norm == 0.0:
            return 0.0, v
        if abs(norm - estimate) <= tol * norm:
            return norm, v
        estimate = norm
        v = w / norm
    raise NumericalError(f"power iteration did not converge in {max_iter} iterations")


def op_norm_power(
    M: SymMatrix,
    tol: float = 1e-10,
    max_iter: int = 20_000,
    rng: RngLike = None,
) -> float:
    """Operator norm by power iteration from a random start; op_norm is the reference"""
    gen = as_generator(rng) if rng is not None else np.random.Generator(np.random.Philox(0))
    v = gen.standard_normal(M.d)
    norm, _ = power_iteration(M.array, v / np.linalg.norm(v), tol, max_iter)
    return norm


def _stack(Ws: Sequence[SymMatrix]) -> np.ndarray:
    if not Ws:
        raise DimensionMismatchError("empty matrix family")
    d = Ws[0].d
    for W in Ws:
        if W.d != d:
            raise DimensionMismatchError(f"mixed dimensions in family: {d} vs {W.d}")
    return np.stack([W.array for W in Ws])


def signed_sum(Ws: Sequence[SymMatrix], eps: Signing) -> SymMatrix:
    """Σ ε_i W_i"""
    stack = _stack(Ws)
    if len(eps) != stack.shape[0]:
        raise DimensionMismatchError(f"{stack.shape[0]} matrices but {len(eps)} signs")
    return SymMatrix._trusted(np.tensordot(eps.eps.astype(np.float64), stack, axes=1))


def margin(Ws: Sequence[SymMatrix], eps: Signing) -> float:
    """‖Σ ε_i W_i‖_op / √n"""
    return op_norm(signed_sum(Ws, eps)) / math.sqrt(len(eps))


def correlated_pair(q: float, d: int, rng: RngLike) -> Tuple[SymMatrix, SymMatrix]:
    """(W, qW + √(1-q²) Z) with W, Z independent GOE(d)"""
    q = float(q)
    if not abs(q) < 1.0:
        raise DomainError(f"overlap must satisfy |q| < 1, got {q}")
    gen = as_generator(rng)
    w = sample_goe(d, gen)
    z = sample_goe(d, gen)
    y = SymMatrix._trusted(q * w.array + math.sqrt(1.0 - q * q) * z.array)
    return w, y


def correlated_pair_batch(q: float, d: int, size: int, rng: RngLike) -> Tuple[np.ndarray, np.ndarray]:
    """Batched correlated_pair as two (size, d, d) stacks"""
    q = float(q)
    if not abs(q) < 1.0:
        raise DomainError(f"overlap must satisfy |q| < 1, got {q}")
    gen = as_generator(rng)
    w = sample_goe_batch(d, size, gen)
    z = sample_goe_batch(d, size, gen)
    return w, q * w + math.sqrt(1.0 - q * q) * z
