"""Synthetic change streams and file ingestion (CSV, IDX)."""

from __future__ import annotations

import csv
import io
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FAMILIES = ("gaussian", "laplace", "uniform", "gaussian-mixture")

# Streams are drawn in fixed-size blocks so any prefix is reproducible
# regardless of how a consumer slices its reads.
BLOCK_ROWS = 1024


@dataclass(frozen=True)
class DistributionSpec:
    """An i.i.d. law on R^dim.

    ``mean`` and ``scale`` broadcast per coordinate. For ``gaussian-mixture``
    the component means are ``mean + components[k]`` with weights ``weights``
    and identity-times-``scale`` noise.
    """

    family: str
    dim: int
    mean: tuple = (0.0,)
    scale: float = 1.0
    components: tuple = ()
    weights: tuple = ()

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; choose from {FAMILIES}")
        if self.dim < 1:
            raise ValueError("dim must be positive")
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        if len(self.mean) not in (1, self.dim):
            raise ValueError("mean must be a scalar or have length dim")
        if self.family == "gaussian-mixture":
            if not self.components or len(self.components) != len(self.weights):
                raise ValueError("mixture needs matching components and weights")
            if any(w < 0 for w in self.weights) or not math.isclose(sum(self.weights), 1.0):
                raise ValueError("mixture weights must be nonnegative and sum to 1")
            for c in self.components:
                if len(c) not in (1, self.dim):
                    raise ValueError("mixture component offsets must be scalar or length dim")

    def sample(self, rng, n):
        mean = np.broadcast_to(np.asarray(self.mean, dtype=np.float64), (self.dim,))
        if self.family == "gaussian":
            return mean + self.scale * rng.standard_normal((n, self.dim))
        if self.family == "laplace":
            u = rng.random((n, self.dim)) - 0.5
            return mean - self.scale * np.sign(u) * np.log1p(-2.0 * np.abs(u))
        if self.family == "uniform":
            return mean + self.scale * rng.uniform(-1.0, 1.0, (n, self.dim))
        offsets = np.array(
            [np.broadcast_to(np.asarray(c, dtype=np.float64), (self.dim,)) for c in self.components]
        )
        which = rng.choice(len(self.weights), size=n, p=np.asarray(self.weights))
        noise = rng.standard_normal((n, self.dim))
        return mean + offsets[which] + self.scale * noise


def gaussian(dim, shift=0.0, scale=1.0):
    return DistributionSpec("gaussian", dim, (float(shift),), float(scale))


def laplace(dim, shift=0.0, scale=1.0):
    return DistributionSpec("laplace", dim, (float(shift),), float(scale))


def uniform(dim, shift=0.0, scale=1.0):
    """Uniform on the centered cube of side ``2 * scale`` (shifted by ``shift``)."""
    return DistributionSpec("uniform", dim, (float(shift),), float(scale))


def mixed_normal(dim, sigma=2.0, shift=0.0):
    """Equal-weight two-component mixture with means ``shift ± sigma/2`` and unit noise."""
    half = sigma / 2.0
    return DistributionSpec(
        "gaussian-mixture", dim, (float(shift),), 1.0,
        components=((half,), (-half,)), weights=(0.5, 0.5),
    )


@dataclass(frozen=True)
class ChangeStreamSpec:
    """Observations 1..eta follow ``pre``, later ones ``post``; ``eta=inf`` is a null stream."""

    pre: DistributionSpec
    post: DistributionSpec | None = None
    eta: float = math.inf
    seed: int = 0

    def __post_init__(self):
        if not (self.eta >= 1):
            raise ValueError(f"change index must be >= 1 or inf, got {self.eta}")
        if self.post is not None and self.post.dim != self.pre.dim:
            raise ValueError("pre and post dimensions differ")
        if math.isfinite(self.eta) and self.post is None:
            raise ValueError("a finite change index needs a post-change distribution")

    @property
    def dim(self):
        return self.pre.dim


class StreamReader:
    """Sequential reader over a change stream; ``take(k)`` returns the next k rows."""

    def __init__(self, spec: ChangeStreamSpec, seed=None):
        self.spec = spec
        self.rng = np.random.default_rng(spec.seed if seed is None else seed)
        self.position = 0  # rows handed out so far
        self._generated = 0
        self._buffer = np.empty((0, spec.dim))

    def _next_block(self):
        start = self._generated + 1  # absolute index of first row
        n_pre = int(min(max(self.spec.eta - start + 1, 0), BLOCK_ROWS))
        parts = []
        if n_pre:
            parts.append(self.spec.pre.sample(self.rng, n_pre))
        if n_pre < BLOCK_ROWS:
            parts.append(self.spec.post.sample(self.rng, BLOCK_ROWS - n_pre))
        self._generated += BLOCK_ROWS
        return np.concatenate(parts) if len(parts) > 1 else parts[0]

    def take(self, k):
        while self._buffer.shape[0] < k:
            self._buffer = np.concatenate([self._buffer, self._next_block()])
        out, self._buffer = self._buffer[:k], self._buffer[k:]
        self.position += k
        return out


def draw_stream(spec: ChangeStreamSpec, length) -> np.ndarray:
    if length < 1:
        raise ValueError(f"length must be at least 1, got {length}")
    return StreamReader(spec).take(int(length))


class ArrayReader:
    """Reader over an in-memory array, for replaying real data."""

    def __init__(self, X):
        self.X = np.asarray(X, dtype=np.float64)
        self.position = 0

    def take(self, k):
        if self.position + k > self.X.shape[0]:
            raise ValueError(
                f"array source exhausted: asked for {k} rows at {self.position}, "
                f"have {self.X.shape[0]}"
            )
        out = self.X[self.position:self.position + k]
        self.position += k
        return out


# --------------------------------------------------------------------- CSV

def _parse_row(cells, row_no):
    values = []
    for col, cell in enumerate(cells, start=1):
        try:
            values.append(float(cell))
        except ValueError:
            raise ValueError(f"row {row_no}, column {col}: cannot parse {cell!r} as a number") from None
    return values


def _is_numeric_row(cells):
    try:
        for c in cells:
            float(c)
    except ValueError:
        return False
    return True


def iter_csv(lines):
    """Yield d-vectors from an iterable of CSV text lines.

    A first row with any non-numeric cell is taken as a header. Blank lines
    are skipped; row numbers in errors are 1-based physical lines.
    """
    dim = None
    for row_no, cells in enumerate(csv.reader(lines), start=1):
        if not cells or all(not c.strip() for c in cells):
            continue
        if dim is None and row_no == 1 and not _is_numeric_row(cells):
            continue
        values = _parse_row(cells, row_no)
        if dim is None:
            dim = len(values)
        elif len(values) != dim:
            raise ValueError(f"row {row_no}: expected {dim} values, got {len(values)}")
        yield np.asarray(values)


def read_csv(source) -> np.ndarray:
    """Read a CSV file path, text, bytes or text stream into an (n, d) array."""
    if isinstance(source, (bytes, bytearray)):
        handle = io.StringIO(source.decode("utf-8"))
    elif isinstance(source, str) and ("\n" in source or "," in source):
        handle = io.StringIO(source)
    elif isinstance(source, (str, Path)):
        handle = open(source, encoding="utf-8", newline="")
    else:
        handle = source
    try:
        rows = list(iter_csv(handle))
    finally:
        if handle is not source:
            handle.close()
    if not rows:
        return np.empty((0, 0))
    return np.vstack(rows)


def write_csv(X, target) -> None:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    lines = "".join(",".join(repr(float(v)) for v in row) + "\n" for row in X)
    if hasattr(target, "write"):
        target.write(lines)
    else:
        Path(target).write_text(lines, encoding="utf-8")


# --------------------------------------------------------------------- IDX

IDX_UNSIGNED_BYTE = 0x08


def read_idx(path) -> np.ndarray:
    """Unsigned-byte IDX file; first axis indexes items, the rest are flattened.

    Pixels are scaled to [0, 1].
    """
    data = Path(path).read_bytes()
    if len(data) < 4:
        raise ValueError(f"{path}: file too short for an IDX header")
    if data[0] != 0 or data[1] != 0:
        raise ValueError(f"{path}: bad magic bytes {data[:2].hex()}, expected 0000")
    type_code, ndim = data[2], data[3]
    if type_code != IDX_UNSIGNED_BYTE:
        raise ValueError(f"{path}: unsupported IDX type code 0x{type_code:02x}")
    if ndim < 1:
        raise ValueError(f"{path}: IDX dimension count must be positive")
    header = 4 + 4 * ndim
    if len(data) < header:
        raise ValueError(f"{path}: truncated header: expected {header} bytes, got {len(data)}")
    dims = struct.unpack(f">{ndim}I", data[4:header])
    expected = int(np.prod(dims, dtype=np.int64))
    actual = len(data) - header
    if actual < expected:
        raise ValueError(
            f"{path}: truncated payload: expected {expected} bytes, got {actual}"
        )
    pixels = np.frombuffer(data, dtype=np.uint8, count=expected, offset=header)
    n = dims[0]
    return pixels.reshape(n, -1).astype(np.float64) / 255.0


def write_idx(images, path) -> None:
    """Inverse of :func:`read_idx` for uint8 arrays (used for fixtures)."""
    arr = np.asarray(images, dtype=np.uint8)
    header = bytes([0, 0, IDX_UNSIGNED_BYTE, arr.ndim]) + struct.pack(f">{arr.ndim}I", *arr.shape)
    Path(path).write_bytes(header + arr.tobytes(order="C"))


def read_points(path) -> np.ndarray:
    """Dispatch on suffix: ``.idx``/``-ubyte`` files as IDX, everything else as CSV."""
    p = str(path)
    if p.endswith((".idx", "ubyte")) or ".idx" in Path(p).name:
        return read_idx(path)
    return read_csv(Path(path))
