"""Dense matrix helpers and path-keyed random streams.

Points, gradients and perturbations are plain ``float64`` numpy arrays of
shape ``(p, r)``; stacked arrays ``(..., p, r)`` are accepted wherever a
batch makes sense.

Randomness is counter-based: an :class:`RngStream` is identified by a master
seed and an integer path, and the Philox key is a hash of both.  Two streams
with the same (seed, path) produce the same numbers no matter when, where or
in which thread they are materialised.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import NumericalFailure

# project-wide tolerance ladder
TOL_MEMBERSHIP = 1e-10
TOL_TANGENT = 1e-8
TOL_SVD = 1e-12

_MIN_SPHERE_NORM = 1e-12


def inner(a, b):
    """Frobenius inner product ``Tr(a^T b)``; batched over leading axes."""
    return np.sum(a * b, axis=(-2, -1))


def fro(a):
    return np.sqrt(inner(a, a))


def sym(a):
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def as_matrix(a) -> np.ndarray:
    """Coerce to a finite 2-D float64 array; 1-D input becomes a column."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"expected a matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("matrix has non-finite entries")
    return arr


def thin_svd(a):
    """Thin SVD ``a = u @ diag(s) @ v.T`` with non-increasing ``s``.

    Works on stacks of matrices.  Raises :class:`NumericalFailure` on
    non-finite input or when LAPACK does not converge.
    """
    a = np.asarray(a, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise NumericalFailure("thin_svd: input has non-finite entries")
    try:
        u, s, vh = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"thin_svd: {exc}") from exc
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(s)) and np.all(np.isfinite(vh))):
        raise NumericalFailure("thin_svd: non-finite factors")
    return u, s, np.swapaxes(vh, -1, -2)


@dataclass(frozen=True)
class RngStream:
    """Value-semantic handle on an independent random stream.

    ``RngStream(seed, (i, k, t, j))`` always yields the same sequence; children
    are created with :meth:`spawn`.
    """

    seed: int
    path: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "seed", int(self.seed))
        object.__setattr__(self, "path", tuple(int(i) for i in self.path))

    def spawn(self, index: int) -> "RngStream":
        return RngStream(self.seed, self.path + (int(index),))

    def key(self) -> int:
        h = hashlib.blake2b(digest_size=16, person=b"zorfl-rng")
        h.update(int(self.seed).to_bytes(16, "little", signed=True))
        for i in self.path:
            h.update(int(i).to_bytes(16, "little", signed=True))
        return int.from_bytes(h.digest(), "little")

    def generator(self) -> np.random.Generator:
        """A fresh generator positioned at the start of this stream."""
        return np.random.Generator(np.random.Philox(key=self.key()))


def spawn_stream(parent: RngStream, index: int) -> RngStream:
    return parent.spawn(index)


def sample_gaussian(stream: RngStream, rows: int, cols: int, size=None) -> np.ndarray:
    """I.i.d. standard normal matrix (or ``size`` of them stacked)."""
    shape = (rows, cols) if size is None else (size, rows, cols)
    return stream.generator().standard_normal(shape)


def sample_unit_sphere(stream: RngStream, rows: int, cols: int, size=None) -> np.ndarray:
    """Uniform draw from the unit Frobenius sphere of R^{rows x cols}.

    Normalised Gaussian; draws with norm below 1e-12 are redrawn.
    """
    if rows * cols < 1:
        raise ValueError("rows*cols must be >= 1")
    gen = stream.generator()
    n = 1 if size is None else size
    out = gen.standard_normal((n, rows, cols))
    norms = fro(out)
    bad = norms < _MIN_SPHERE_NORM
    while np.any(bad):
        out[bad] = gen.standard_normal((int(bad.sum()), rows, cols))
        norms = fro(out)
        bad = norms < _MIN_SPHERE_NORM
    out /= norms[:, None, None]
    return out[0] if size is None else out
