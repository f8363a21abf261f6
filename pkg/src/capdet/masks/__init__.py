"""Run-length-encoded binary masks and their area/union operations.

RLE convention: pixels are enumerated in column-major order and the counts
alternate background/foreground runs, starting with a background run whose
length may be zero. This is bit-compatible with COCO's uncompressed RLE.
Every count after the first must be at least 1, and the counts must sum to
``height * width``.

Union areas are computed by merging foreground run intervals, never by
decoding to bitmaps. Two interchangeable kernel backends exist: a compiled
extension and a NumPy fallback, selected at import time (set
``CAPDET_DISABLE_EXTENSION=1`` to force the fallback). The per-record mask
document format is a JSON object mapping scene-graph object ids to masks::

    {"o1": {"height": 4, "width": 6, "counts": [3, 2, 19]}, ...}

Objects without masks simply do not appear in the document.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from capdet.errors import (
    DimensionMismatchError,
    EmptyInputError,
    InvalidRleError,
    MalformedDocumentError,
)
from capdet.util import json_compact

from capdet.masks import _kernels_py

if os.environ.get("CAPDET_DISABLE_EXTENSION"):
    _compiled = None
else:
    try:
        from capdet.masks import _kernels as _compiled
    except ImportError:
        _compiled = None

_impl = _compiled if _compiled is not None else _kernels_py


def kernel_backend() -> str:
    """Which kernel backend was selected at import: 'compiled' or 'python'."""
    return "compiled" if _impl is not _kernels_py else "python"


@dataclass(frozen=True)
class RleMask:
    """Run-length-encoded binary mask with its grid dimensions."""

    height: int
    width: int
    counts: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "counts", tuple(self.counts))


def validate_rle(m: RleMask) -> None:
    """Raise InvalidRleError unless the mask satisfies all RLE invariants."""
    if m.height < 0 or m.width < 0:
        raise InvalidRleError(f"negative dimensions {m.height}x{m.width}")
    total = 0
    for i, c in enumerate(m.counts):
        if not isinstance(c, int) or isinstance(c, bool):
            raise InvalidRleError(f"count at index {i} is not an integer")
        if c < 0:
            raise InvalidRleError(f"negative run length at index {i}")
        if c == 0 and i > 0:
            raise InvalidRleError(f"zero-length interior run at index {i}")
        total += c
    if total != m.height * m.width:
        raise InvalidRleError(
            f"counts sum to {total}, expected {m.height * m.width} for a "
            f"{m.height}x{m.width} grid"
        )


def rle_decode(m: RleMask) -> np.ndarray:
    """Decode to a (height, width) uint8 bitmap."""
    validate_rle(m)
    flat = np.asarray(_impl.decode_runs(m.counts, m.height * m.width), dtype=np.uint8)
    return flat.reshape((m.height, m.width), order="F")


def rle_encode(bitmap) -> RleMask:
    """Encode a 2-D array (any nonzero value counts as foreground)."""
    arr = np.asarray(bitmap)
    if arr.ndim != 2:
        raise InvalidRleError(f"bitmap must be 2-D, got shape {arr.shape}")
    flat = np.ascontiguousarray((arr != 0).ravel(order="F"), dtype=np.uint8)
    h, w = arr.shape
    return RleMask(height=int(h), width=int(w), counts=tuple(_impl.encode_runs(flat)))


def mask_area(m: RleMask) -> int:
    """Foreground pixel count."""
    validate_rle(m)
    return int(sum(m.counts[1::2]))


def union_area(masks: Sequence[RleMask]) -> int:
    """Pixels set in at least one mask. All masks must share dimensions."""
    if not masks:
        raise EmptyInputError("union_area needs at least one mask")
    h, w = masks[0].height, masks[0].width
    for m in masks:
        if (m.height, m.width) != (h, w):
            raise DimensionMismatchError(
                f"mask is {m.height}x{m.width}, expected {h}x{w}"
            )
        validate_rle(m)
    if len(masks) == 1:
        return int(sum(masks[0].counts[1::2]))
    return int(_impl.union_area_runs([m.counts for m in masks]))


def read_mask_document(data: bytes | str) -> dict[str, RleMask]:
    """Parse a per-record mask document into an object-id to mask mapping."""
    if isinstance(data, (bytes, bytearray)):
        data = bytes(data).decode("utf-8")
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as e:
        raise MalformedDocumentError(f"mask document is not valid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise MalformedDocumentError("mask document must be a JSON object")
    out: dict[str, RleMask] = {}
    for object_id, entry in doc.items():
        if not isinstance(entry, dict):
            raise MalformedDocumentError(f"mask entry for {object_id!r} must be an object")
        try:
            mask = RleMask(
                height=entry["height"], width=entry["width"], counts=tuple(entry["counts"])
            )
        except (KeyError, TypeError) as e:
            raise MalformedDocumentError(
                f"mask entry for {object_id!r} is missing or mistyped: {e}"
            ) from e
        try:
            validate_rle(mask)
        except InvalidRleError as e:
            raise InvalidRleError(f"mask for object {object_id!r}: {e}") from e
        out[object_id] = mask
    return out


def write_mask_document(masks: Mapping[str, RleMask]) -> bytes:
    """Canonical byte form of a per-record mask document (ids sorted)."""
    doc = {
        oid: {"height": m.height, "width": m.width, "counts": list(m.counts)}
        for oid, m in sorted(masks.items())
    }
    return json_compact(doc).encode("utf-8")
