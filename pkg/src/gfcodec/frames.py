"""Gaussian frame data types and the .gfr on-disk container.

A frame stores activated values (true scales, opacities in [0, 1]) rather
than pre-activation logits, so every invariant is directly checkable.
Spherical harmonics are degree 3: 16 basis functions times RGB = 48
coefficients per Gaussian, laid out coefficient-major (DC rgb first, then
ascending degree).
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, FormatError

GFR_MAGIC = b"GFRM"
GFR_VERSION = 1
GFR_HEADER = struct.Struct("<4sIQ")  # magic, version, N
SH_COEFFS = 48
FLOATS_PER_GAUSSIAN = 3 + 4 + 3 + 1 + SH_COEFFS  # 59

# Quaternion norm may deviate up to this much on load before it is an error;
# after renormalization the norm must sit within UNIT_TOL of 1.
LOAD_QUAT_TOL = 1e-3
UNIT_TOL = 1e-6


@dataclass(frozen=True)
class LoadReport:
    """What load_frame had to repair."""

    max_quat_deviation: float = 0.0
    renormalized: int = 0


@dataclass(frozen=True)
class GaussianFrame:
    """One time-step's Gaussian set. Immutable value record.

    positions   (N, 3) float32, scene units
    rotations   (N, 4) float32, unit quaternions, w first
    scales      (N, 3) float32, strictly positive
    opacities   (N,)   float32 in [0, 1]
    sh          (N, 48) float32, DC first then ascending degree
    """

    positions: np.ndarray
    rotations: np.ndarray
    scales: np.ndarray
    opacities: np.ndarray
    sh: np.ndarray
    load_report: LoadReport | None = field(default=None, compare=False)

    @property
    def count(self) -> int:
        return int(self.positions.shape[0])

    def __post_init__(self):
        for name in ("positions", "rotations", "scales", "opacities", "sh"):
            arr = getattr(self, name)
            if arr.dtype != np.float32:
                object.__setattr__(self, name, np.asarray(arr, dtype=np.float32))
            getattr(self, name).setflags(write=False)

    def replace_geometry(
        self, positions: np.ndarray, rotations: np.ndarray
    ) -> "GaussianFrame":
        return GaussianFrame(
            positions=np.asarray(positions, dtype=np.float32),
            rotations=np.asarray(rotations, dtype=np.float32),
            scales=self.scales,
            opacities=self.opacities,
            sh=self.sh,
        )

    def replace_sh(self, sh: np.ndarray) -> "GaussianFrame":
        return GaussianFrame(
            positions=self.positions,
            rotations=self.rotations,
            scales=self.scales,
            opacities=self.opacities,
            sh=np.asarray(sh, dtype=np.float32),
        )

    def equals(self, other: "GaussianFrame") -> bool:
        """Bit-exact field comparison."""
        return (
            self.count == other.count
            and np.array_equal(self.positions, other.positions)
            and np.array_equal(self.rotations, other.rotations)
            and np.array_equal(self.scales, other.scales)
            and np.array_equal(self.opacities, other.opacities)
            and np.array_equal(self.sh, other.sh)
        )


@dataclass(frozen=True)
class GroupOfFrames:
    """An I-frame plus the P-frames coded against it."""

    i_frame: GaussianFrame
    p_frames: tuple[GaussianFrame, ...]

    @property
    def gof_length(self) -> int:
        return 1 + len(self.p_frames)

    @property
    def frames(self) -> tuple[GaussianFrame, ...]:
        return (self.i_frame, *self.p_frames)

    def __post_init__(self):
        n = self.i_frame.count
        for i, frame in enumerate(self.p_frames):
            if frame.count != n:
                raise DataError(
                    f"P-frame {i} has {frame.count} Gaussians, I-frame has {n}; "
                    "the codec transmits no additions or removals"
                )


@dataclass(frozen=True)
class Violation:
    index: int          # Gaussian index, -1 for frame-level problems
    fields: str
    message: str


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...]

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_frame(frame: GaussianFrame) -> ValidationReport:
    """Check every frame invariant; report-only, never raises."""
    out: list[Violation] = []
    n = frame.count
    shapes = {
        "positions": (n, 3),
        "rotations": (n, 4),
        "scales": (n, 3),
        "opacities": (n,),
        "sh": (n, SH_COEFFS),
    }
    for name, want in shapes.items():
        arr = getattr(frame, name)
        if arr.shape != want:
            out.append(Violation(-1, name, f"shape {arr.shape}, expected {want}"))
    if out:
        return ValidationReport(tuple(out))

    for name in shapes:
        arr = getattr(frame, name)
        bad = ~np.isfinite(arr)
        if bad.any():
            idx = int(np.argwhere(bad)[0][0])
            out.append(Violation(idx, name, "non-finite value"))

    norms = np.linalg.norm(frame.rotations.astype(np.float64), axis=1)
    bad = np.abs(norms - 1.0) > UNIT_TOL
    for idx in np.nonzero(bad)[0]:
        out.append(
            Violation(int(idx), "rotations", f"quaternion norm {norms[idx]:.6g}")
        )

    bad = ~(frame.scales > 0) | ~np.isfinite(frame.scales)
    for idx in np.unique(np.nonzero(bad)[0]):
        out.append(Violation(int(idx), "scales", "scale must be strictly positive"))

    with np.errstate(invalid="ignore"):
        bad = (frame.opacities < 0) | (frame.opacities > 1)
    for idx in np.nonzero(bad)[0]:
        out.append(
            Violation(int(idx), "opacities", f"opacity {frame.opacities[idx]:.6g} outside [0, 1]")
        )

    return ValidationReport(tuple(out))


def frame_byte_size(n: int) -> int:
    """Exact container size for a frame with n Gaussians."""
    return GFR_HEADER.size + n * FLOATS_PER_GAUSSIAN * 4


def frame_to_bytes(frame: GaussianFrame) -> bytes:
    report = validate_frame(frame)
    if not report.ok:
        v = report.violations[0]
        raise DataError(f"refusing to save invalid frame: {v.fields}[{v.index}]: {v.message}")
    buf = io.BytesIO()
    buf.write(GFR_HEADER.pack(GFR_MAGIC, GFR_VERSION, frame.count))
    for name in ("positions", "rotations", "scales", "opacities", "sh"):
        arr = getattr(frame, name)
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return buf.getvalue()


def frame_from_bytes(data: bytes) -> GaussianFrame:
    if len(data) < GFR_HEADER.size:
        raise FormatError("frame container truncated before header")
    magic, version, n = GFR_HEADER.unpack_from(data, 0)
    if magic != GFR_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {GFR_MAGIC!r}")
    if version != GFR_VERSION:
        raise FormatError(f"unsupported container version {version}")
    if n == 0:
        raise FormatError("empty frame")
    expected = frame_byte_size(n)
    if len(data) != expected:
        raise FormatError(f"container is {len(data)} bytes, expected {expected} for N={n}")

    off = GFR_HEADER.size
    def take(count):
        nonlocal off
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=off).copy()
        off += count * 4
        return arr

    positions = take(3 * n).reshape(n, 3)
    rotations = take(4 * n).reshape(n, 4)
    scales = take(3 * n).reshape(n, 3)
    opacities = take(n)
    sh = take(SH_COEFFS * n).reshape(n, SH_COEFFS)

    norms = np.linalg.norm(rotations.astype(np.float64), axis=1)
    deviation = np.abs(norms - 1.0)
    max_dev = float(deviation.max()) if n else 0.0
    if max_dev > LOAD_QUAT_TOL:
        idx = int(np.argmax(deviation))
        raise DataError(
            f"quaternion {idx} deviates from unit norm by {max_dev:.6g} "
            f"(tolerance {LOAD_QUAT_TOL})"
        )
    # Valid frames (deviation <= UNIT_TOL) pass through untouched so the
    # save/load round trip stays bit-exact.
    needs = deviation > UNIT_TOL
    renormalized = int(needs.sum())
    if renormalized:
        fixed = rotations.astype(np.float64)
        fixed[needs] /= norms[needs, None]
        rotations = fixed.astype(np.float32)

    frame = GaussianFrame(
        positions=positions,
        rotations=rotations,
        scales=scales,
        opacities=opacities,
        sh=sh,
        load_report=LoadReport(max_quat_deviation=max_dev, renormalized=renormalized),
    )
    report = validate_frame(frame)
    if not report.ok:
        v = report.violations[0]
        raise DataError(f"invalid frame: {v.fields}[{v.index}]: {v.message}")
    return frame


def save_frame(frame: GaussianFrame, path) -> int:
    """Write the .gfr container; returns bytes written."""
    data = frame_to_bytes(frame)
    with open(path, "wb") as fh:
        fh.write(data)
    return len(data)


def load_frame(path) -> GaussianFrame:
    """Read and validate a .gfr container.

    Quaternions off unit norm by at most LOAD_QUAT_TOL are renormalized and
    noted in the frame's load_report; larger deviations are an error.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    return frame_from_bytes(data)
