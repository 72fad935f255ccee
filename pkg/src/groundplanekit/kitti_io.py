"""Readers and writers for KITTI-format calibration and label text files.

Both parsers are total: any text input either parses or raises FormatError
with the offending 1-based line number. Label writing comes in two flavors,
the conventional fixed 2-decimal KITTI form and a full-precision form whose
output round-trips exactly through parse_labels.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np

from .camera_geometry import CameraModel, ObjectBox3D

_FLOAT_RE = re.compile(r"^[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?$")
_INT_RE = re.compile(r"^[+-]?\d+$")
_PROJECTION_NAME_RE = re.compile(r"^P\d+$")

DONTCARE = "DontCare"


class FormatError(ValueError):
    """Malformed KITTI text; `line` is the 1-based line number when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


def _parse_float(token: str, line: int) -> float:
    if not _FLOAT_RE.match(token):
        raise FormatError(f"malformed float token {token!r}", line)
    value = float(token)
    if not math.isfinite(value):
        raise FormatError(f"non-finite value {token!r}", line)
    return value


def _parse_int(token: str, line: int) -> int:
    # Tolerate integral floats ("0.00") since prediction dumps produce them.
    if _INT_RE.match(token):
        return int(token)
    value = _parse_float(token, line)
    if value != int(value):
        raise FormatError(f"expected integer token, got {token!r}", line)
    return int(value)


@dataclass
class CalibRecord:
    """Named 3x4 projection matrices plus unparsed calibration lines.

    Only projection entries (names like "P2") land in `matrices`; everything
    else (R0_rect, Tr_velo_to_cam, ...) is kept verbatim in `raw`.
    """

    matrices: dict[str, np.ndarray] = field(default_factory=dict)
    raw: dict[str, str] = field(default_factory=dict)

    def camera(self, name: str = "P2") -> CameraModel:
        if name not in self.matrices:
            raise KeyError(f"no projection matrix {name!r} in calibration")
        return CameraModel(self.matrices[name])


def parse_calib(text: str, keep_raw: bool = True) -> CalibRecord:
    """Parse KITTI calibration text ("NAME: v1 ... v12" per line)."""
    record = CalibRecord()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        name, sep, value = line.partition(":")
        if not sep:
            raise FormatError("expected 'NAME: values'", lineno)
        name = name.strip()
        if not name:
            raise FormatError("empty entry name", lineno)
        if name in record.matrices or name in record.raw:
            raise FormatError(f"duplicate entry {name!r}", lineno)
        if _PROJECTION_NAME_RE.match(name):
            tokens = value.split()
            if len(tokens) != 12:
                raise FormatError(
                    f"{name}: token count {len(tokens)} != 12", lineno
                )
            values = [_parse_float(t, lineno) for t in tokens]
            record.matrices[name] = np.array(values).reshape(3, 4)
        elif keep_raw:
            record.raw[name] = value.strip()
    return record


def write_calib(record: CalibRecord) -> str:
    """Inverse of parse_calib; matrices are printed at full precision."""
    lines = []
    for name, mat in record.matrices.items():
        values = " ".join(repr(float(v)) for v in np.asarray(mat).ravel())
        lines.append(f"{name}: {values}")
    for name, value in record.raw.items():
        lines.append(f"{name}: {value}")
    return "\n".join(lines) + ("\n" if lines else "")


@dataclass
class LabelRecord:
    """One KITTI label line: class, geometry, and an optional detection score."""

    cls_type: str
    truncated: float
    occluded: int
    alpha: float
    bbox2d: tuple[float, float, float, float]
    dims: tuple[float, float, float]
    location: tuple[float, float, float]
    rotation_y: float
    score: float | None = None

    def __post_init__(self):
        self.bbox2d = tuple(float(v) for v in self.bbox2d)
        self.dims = tuple(float(v) for v in self.dims)
        self.location = tuple(float(v) for v in self.location)
        values = (
            self.truncated,
            self.alpha,
            *self.bbox2d,
            *self.dims,
            *self.location,
            self.rotation_y,
        )
        if not all(math.isfinite(v) for v in values):
            raise ValueError("label has non-finite fields")
        if not self.is_dontcare and min(self.dims) <= 0.0:
            raise ValueError(
                f"non-positive dims {self.dims} only allowed for {DONTCARE}"
            )

    @property
    def is_dontcare(self) -> bool:
        return self.cls_type == DONTCARE

    def box3d(self) -> ObjectBox3D:
        if self.is_dontcare:
            raise ValueError(f"{DONTCARE} rows carry no valid 3D box")
        return ObjectBox3D(self.location, self.dims, self.rotation_y)


def parse_labels(text: str) -> list[LabelRecord]:
    """Parse KITTI label text (15 fields per line, 16 with a score)."""
    records = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) not in (15, 16):
            raise FormatError(
                f"field count {len(fields)} not in (15, 16)", lineno
            )
        cls_type = fields[0]
        nums = [_parse_float(t, lineno) for t in fields[4:15]]
        try:
            record = LabelRecord(
                cls_type=cls_type,
                truncated=_parse_float(fields[1], lineno),
                occluded=_parse_int(fields[2], lineno),
                alpha=_parse_float(fields[3], lineno),
                bbox2d=tuple(nums[0:4]),
                dims=tuple(nums[4:7]),
                location=tuple(nums[7:10]),
                rotation_y=nums[10],
                score=_parse_float(fields[15], lineno) if len(fields) == 16 else None,
            )
        except FormatError:
            raise
        except ValueError as exc:
            raise FormatError(str(exc), lineno) from None
        records.append(record)
    return records


def write_labels(records, precision: str = "kitti") -> str:
    """Serialize label records.

    precision="kitti" prints the conventional fixed 2-decimal fields;
    precision="full" prints shortest round-trip floats so that
    parse_labels(write_labels(r, "full")) == r exactly.
    """
    if precision == "kitti":
        fmt = lambda v: f"{v:.2f}"
    elif precision == "full":
        fmt = lambda v: repr(float(v))
    else:
        raise ValueError(f"unknown precision {precision!r}")

    lines = []
    for r in records:
        parts = [
            r.cls_type,
            fmt(r.truncated),
            str(int(r.occluded)),
            fmt(r.alpha),
            *[fmt(v) for v in r.bbox2d],
            *[fmt(v) for v in r.dims],
            *[fmt(v) for v in r.location],
            fmt(r.rotation_y),
        ]
        if r.score is not None:
            parts.append(fmt(r.score))
        lines.append(" ".join(parts))
    return "\n".join(lines) + ("\n" if lines else "")


def load_calib(path) -> CalibRecord:
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        return parse_calib(fh.read())


def load_labels(path) -> list[LabelRecord]:
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        return parse_labels(fh.read())


def valid_objects(records) -> list[LabelRecord]:
    """Labels usable as 3D boxes (everything except DontCare rows)."""
    return [r for r in records if not r.is_dontcare]
