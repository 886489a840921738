"""File interchange for patch-feature tensors, masks, and channel vectors.

Everything on disk is NPY version 1.0: the 6-byte magic ``\\x93NUMPY``,
version bytes ``\\x01\\x00``, a 2-byte little-endian header length, then a
Python dict literal with keys ``descr`` (``<f4`` or ``<f8``),
``fortran_order`` (must be False) and ``shape``; the payload is
little-endian, C order.  Files are always written as ``<f8``; ``<f4``
payloads are widened to float64 on load.  Fortran-order files are rejected,
never transposed: silently swapping axes is the worst failure mode for an
H x W lattice.
"""

from __future__ import annotations

import ast
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

_MAGIC = b"\x93NUMPY"
_VERSION = b"\x01\x00"
_ACCEPTED_DESCR = ("<f4", "<f8")


class NpyFormatError(ValueError):
    """Raised for any container that is not a well-formed NPY v1.0 file."""


@dataclass(eq=False)
class PatchGrid:
    """One image's patch-token features laid out on an H x W lattice.

    ``data`` has shape (H, W, D), float64, C order; token t = row * W + col.
    ``meta`` carries advisory flags (e.g. degenerate-token warnings) and does
    not participate in value semantics.
    """

    data: np.ndarray
    meta: dict = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3:
            raise ValueError(f"patch grid must be 3-d (H, W, D), got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise ValueError(f"patch grid dimensions must all be >= 1, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("patch grid contains non-finite elements")
        self.data = np.ascontiguousarray(arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def dim(self) -> int:
        return self.data.shape[2]

    @property
    def token_count(self) -> int:
        return self.height * self.width

    @property
    def tokens(self) -> np.ndarray:
        """(T, D) row-major view of the lattice."""
        return self.data.reshape(self.token_count, self.dim)


@dataclass(eq=False)
class SegmentMask:
    """Binary H x W object mask; True marks the inside region."""

    bits: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.bits)
        if arr.ndim != 2:
            raise ValueError(f"mask must be 2-d (H, W), got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise ValueError(f"mask dimensions must all be >= 1, got shape {arr.shape}")
        if arr.dtype != np.bool_:
            raise ValueError(f"mask bits must be boolean, got dtype {arr.dtype}")
        self.bits = np.ascontiguousarray(arr)

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def inside_count(self) -> int:
        return int(self.bits.sum())


@dataclass(eq=False)
class ChannelVector:
    """A per-channel vector of length D (a global token, a channel mean, ...)."""

    values: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 1:
            raise ValueError(f"channel vector must be 1-d, got shape {arr.shape}")
        if arr.shape[0] < 1:
            raise ValueError("channel vector must have at least one channel")
        if not np.all(np.isfinite(arr)):
            raise ValueError("channel vector contains non-finite elements")
        self.values = np.ascontiguousarray(arr)

    @property
    def dim(self) -> int:
        return self.values.shape[0]


def read_npy(path: str | Path) -> np.ndarray:
    """Read a strict NPY v1.0 file into a float64 C-order array.

    Accepts ``<f4``/``<f8`` payloads only; every header or payload defect
    raises :class:`NpyFormatError` naming the file.
    """
    path = Path(path)
    raw = path.read_bytes()

    def bad(reason: str) -> NpyFormatError:
        return NpyFormatError(f"{path}: {reason}")

    if len(raw) < 10:
        raise bad("file too short for an NPY header")
    if raw[:6] != _MAGIC:
        raise bad("missing NPY magic bytes")
    if raw[6:8] != _VERSION:
        raise bad(f"unsupported NPY version {raw[6]}.{raw[7]}, only 1.0 is accepted")
    (header_len,) = struct.unpack("<H", raw[8:10])
    if len(raw) < 10 + header_len:
        raise bad("truncated NPY header")
    try:
        header = ast.literal_eval(raw[10 : 10 + header_len].decode("latin1"))
    except (ValueError, SyntaxError) as exc:
        raise bad(f"unparseable NPY header ({exc})") from None
    if not isinstance(header, dict) or set(header) != {"descr", "fortran_order", "shape"}:
        raise bad("NPY header must be a dict with keys descr, fortran_order, shape")

    descr = header["descr"]
    if descr not in _ACCEPTED_DESCR:
        raise bad(f"unsupported dtype {descr!r}, expected one of {_ACCEPTED_DESCR}")
    if header["fortran_order"] is not False:
        raise bad("fortran_order payloads are rejected, re-dump in C order")
    shape = header["shape"]
    if not (
        isinstance(shape, tuple)
        and all(isinstance(s, int) and s >= 0 for s in shape)
    ):
        raise bad(f"invalid shape {shape!r}")

    itemsize = 4 if descr == "<f4" else 8
    expected = itemsize * int(np.prod(shape, dtype=np.int64)) if shape else itemsize
    payload = raw[10 + header_len :]
    if len(payload) != expected:
        raise bad(f"payload holds {len(payload)} bytes, header promises {expected}")
    arr = np.frombuffer(payload, dtype=np.dtype(descr)).reshape(shape)
    return arr.astype(np.float64, copy=True)


def npy_bytes(arr: np.ndarray) -> bytes:
    """Encode an array as NPY v1.0, ``<f8``, C order."""
    arr = np.ascontiguousarray(np.asarray(arr, dtype="<f8"))
    header = "{'descr': '<f8', 'fortran_order': False, 'shape': %s, }" % repr(arr.shape)
    # total of magic + version + length field + header is padded to 64 bytes
    base = len(_MAGIC) + 2 + 2 + len(header) + 1
    header = header + " " * ((64 - base % 64) % 64) + "\n"
    return b"".join(
        (
            _MAGIC,
            _VERSION,
            struct.pack("<H", len(header)),
            header.encode("latin1"),
            arr.tobytes(order="C"),
        )
    )


def write_npy(path: str | Path, arr: np.ndarray) -> None:
    """Write an array as NPY v1.0, ``<f8``, C order."""
    Path(path).write_bytes(npy_bytes(arr))


def load_patch_grid(
    path: str | Path, grid_hint: tuple[int, int] | None = None
) -> PatchGrid:
    """Load a feature tensor of shape (H, W, D) or (T, D).

    A (T, D) payload needs ``grid_hint`` = (H, W) with H * W = T; the flat
    token order is kept row-major.  Non-finite elements are rejected.
    """
    arr = read_npy(path)
    if arr.ndim == 3:
        if grid_hint is not None and grid_hint != arr.shape[:2]:
            raise ValueError(
                f"{path}: grid hint {grid_hint} contradicts on-disk shape {arr.shape}"
            )
    elif arr.ndim == 2:
        if grid_hint is None:
            raise ValueError(
                f"{path}: shape {arr.shape} is (T, D), pass grid_hint=(H, W) to place it"
            )
        h, w = grid_hint
        if h < 1 or w < 1:
            raise ValueError(f"{path}: grid hint {grid_hint} must be positive")
        if h * w != arr.shape[0]:
            raise ValueError(
                f"{path}: grid hint {grid_hint} implies {h * w} tokens, file holds {arr.shape[0]}"
            )
        arr = arr.reshape(h, w, arr.shape[1])
    else:
        raise ValueError(f"{path}: expected 2-d or 3-d tensor, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{path}: tensor contains non-finite elements")
    return PatchGrid(arr)


def save_patch_grid(grid: PatchGrid, path: str | Path) -> None:
    """Save a grid as (H, W, D) float64 NPY; round-trips bit-exactly."""
    if not np.all(np.isfinite(grid.data)):
        raise ValueError("refusing to save a grid with non-finite elements")
    write_npy(path, grid.data)


def load_mask(path: str | Path) -> SegmentMask:
    """Load a binary mask stored as an (H, W) float NPY with values in {0, 1}."""
    arr = read_npy(path)
    if arr.ndim != 2:
        raise ValueError(f"{path}: mask must be 2-d (H, W), got shape {arr.shape}")
    bad = (arr != 0.0) & (arr != 1.0)
    if bad.any():
        value = arr[bad][0]
        raise ValueError(f"{path}: mask values must be 0 or 1, found {value}")
    return SegmentMask(arr == 1.0)


def save_mask(mask: SegmentMask, path: str | Path) -> None:
    write_npy(path, mask.bits.astype(np.float64))


def load_channel_vector(path: str | Path) -> ChannelVector:
    """Load a length-D vector stored as a 1-d NPY."""
    arr = read_npy(path)
    if arr.ndim != 1:
        raise ValueError(f"{path}: channel vector must be 1-d, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{path}: channel vector contains non-finite elements")
    return ChannelVector(arr)


def save_channel_vector(vector: ChannelVector, path: str | Path) -> None:
    write_npy(path, vector.values)
