"""CSV matrix I/O and client partitioning."""

from __future__ import annotations

import csv
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidScheme, ParseError, RaggedRows
from ..linalg import RngStream


def _parse_float(text):
    try:
        v = float(text)
    except ValueError:
        return None
    return v if np.isfinite(v) else None


def load_matrix_csv(path) -> np.ndarray:
    """Read a rectangular numeric CSV (rows = samples).

    A first line that is not fully numeric is treated as a header.  Raises
    ``OSError`` when the file cannot be read, :class:`ParseError` for a bad
    cell and :class:`RaggedRows` for inconsistent row lengths.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [row for row in csv.reader(fh)]
    lineno = [i + 1 for i, row in enumerate(rows) if any(c.strip() for c in row)]
    rows = [row for row in rows if any(c.strip() for c in row)]
    if not rows:
        raise ParseError(f"{path}: no data")
    if any(_parse_float(c.strip()) is None for c in rows[0]):
        rows, lineno = rows[1:], lineno[1:]
        if not rows:
            raise ParseError(f"{path}: header only")
    width = len(rows[0])
    out = np.empty((len(rows), width))
    for i, row in enumerate(rows):
        if len(row) != width:
            raise RaggedRows(f"{path}: expected {width} columns, found {len(row)}", line=lineno[i])
        for j, cell in enumerate(row):
            v = _parse_float(cell.strip())
            if v is None:
                raise ParseError(f"{path}: not a finite number: {cell!r}", line=lineno[i], col=j + 1)
            out[i, j] = v
    return out


def write_matrix_csv(path, a, header=None):
    """Atomically write a matrix with full float precision."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    lines = []
    if header is not None:
        lines.append(",".join(header))
    lines.extend(",".join(repr(float(v)) for v in row) for row in a)
    atomic_write_text(path, "\n".join(lines) + "\n")


def atomic_write_text(path, text):
    """Write to a temp file in the target directory, then rename over ``path``."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- partitions ---------------------------------------------------------------

IID = "iid"
SORTED_SHARDS = "sorted_shards"
DIRICHLET = "dirichlet"


@dataclass(frozen=True)
class PartitionScheme:
    kind: str = IID
    shards_per_client: int = 1
    alpha: float = 1.0

    def __post_init__(self):
        if self.kind not in (IID, SORTED_SHARDS, DIRICHLET):
            raise InvalidScheme(f"unknown partition scheme {self.kind!r}")
        if self.kind == SORTED_SHARDS and int(self.shards_per_client) < 1:
            raise InvalidScheme("shards_per_client must be >= 1")
        if self.kind == DIRICHLET and not self.alpha > 0:
            raise InvalidScheme("dirichlet alpha must be > 0")


@dataclass
class Partition:
    scheme: PartitionScheme
    n_samples: int
    assignment: list = field(default_factory=list)

    @property
    def n_clients(self):
        return len(self.assignment)

    def sizes(self):
        return [len(a) for a in self.assignment]


def partition_dataset(n_samples, n_clients, scheme=None, stream=None, keys=None) -> Partition:
    """Split sample indices among clients.

    IID and sorted-shard partitions give every client the same number of
    samples; the remainder is dropped so the client-averaged objective is an
    unweighted mean.  Sorted shards order samples by ``keys`` (index order if
    absent), cut ``n_clients * shards_per_client`` contiguous shards and deal
    them out at random.  Dirichlet draws client proportions and gives every
    client at least one sample, using every sample.  Each client's indices are
    returned sorted.
    """
    scheme = scheme or PartitionScheme()
    if n_clients < 1 or n_clients > n_samples:
        raise InvalidScheme(f"need 1 <= n_clients <= n_samples, got {n_clients} clients for {n_samples} samples")
    stream = stream or RngStream(0, (2**31 + 2,))
    gen = stream.generator()
    if scheme.kind == IID:
        perm = gen.permutation(n_samples)
        size = n_samples // n_clients
        groups = [perm[i * size : (i + 1) * size] for i in range(n_clients)]
    elif scheme.kind == SORTED_SHARDS:
        s = int(scheme.shards_per_client)
        n_shards = n_clients * s
        if n_shards > n_samples:
            raise InvalidScheme("more shards than samples")
        order = np.arange(n_samples) if keys is None else np.argsort(np.asarray(keys), kind="stable")
        size = n_samples // n_shards
        shards = [order[i * size : (i + 1) * size] for i in range(n_shards)]
        deal = gen.permutation(n_shards)
        groups = [np.concatenate([shards[d] for d in deal[i * s : (i + 1) * s]]) for i in range(n_clients)]
    else:
        props = gen.dirichlet(np.full(n_clients, float(scheme.alpha)))
        extra = gen.multinomial(n_samples - n_clients, props)
        counts = 1 + extra
        perm = gen.permutation(n_samples)
        bounds = np.concatenate([[0], np.cumsum(counts)])
        groups = [perm[bounds[i] : bounds[i + 1]] for i in range(n_clients)]
    return Partition(scheme, n_samples, [np.sort(g).astype(np.int64) for g in groups])
