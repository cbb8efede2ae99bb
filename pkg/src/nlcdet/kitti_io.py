"""Readers and writers for KITTI-format calibration, label, and velodyne files,
plus conversion of camera-frame labels to LiDAR-frame boxes.

All parsers are total: arbitrary byte input yields either a value or a
structured :class:`~nlcdet.errors.KittiIOError`, never an unhandled crash.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateCalib,
    MalformedMatrix,
    MissingField,
    ParseError,
    TruncatedFile,
)
from .geometry import Box3D, Calibration, normalize_angle

__all__ = [
    "KittiCalib",
    "KittiLabel",
    "parse_calib",
    "emit_calib",
    "parse_labels",
    "emit_labels",
    "read_velodyne",
    "write_velodyne",
    "to_calibration",
    "label_to_lidar_box",
    "lidar_box_to_label",
    "filter_detection_range",
    "downsample",
]

# Appendix-style detection range: x forward, y lateral, z vertical (m),
# intervals closed on both ends.
DETECTION_RANGE = ((0.0, 70.4), (-40.0, 40.0), (-3.0, 1.0))


@dataclass
class KittiCalib:
    P2: np.ndarray  # (3, 4)
    R0_rect: np.ndarray  # (3, 3)
    Tr_velo_to_cam: np.ndarray  # (3, 4)


@dataclass
class KittiLabel:
    type: str
    truncated: float
    occluded: int
    alpha: float
    bbox2d: tuple[float, float, float, float]
    h: float
    w: float
    l: float
    location: tuple[float, float, float]  # camera frame, bottom center
    rotation_y: float

    @property
    def is_dont_care(self) -> bool:
        return self.type == "DontCare"


def _as_text(data) -> str:
    if isinstance(data, bytes):
        return data.decode("latin-1")
    return str(data)


def _parse_float(token: str, line_no: int, col: int) -> float:
    try:
        value = float(token)
    except ValueError:
        raise ParseError(
            f"line {line_no}, column {col}: {token!r} is not a number",
            line=line_no,
            column=col,
        ) from None
    return value


_CALIB_SHAPES = {"P2": (3, 4), "R0_rect": (3, 3), "Tr_velo_to_cam": (3, 4)}


def parse_calib(text) -> KittiCalib:
    """Parse a KITTI calibration file; unknown keys are ignored."""
    found = {}
    for line_no, line in enumerate(_as_text(text).splitlines(), start=1):
        if ":" not in line:
            continue
        key, _, rest = line.partition(":")
        key = key.strip()
        if key not in _CALIB_SHAPES:
            continue
        shape = _CALIB_SHAPES[key]
        tokens = rest.split()
        if len(tokens) != shape[0] * shape[1]:
            raise MalformedMatrix(
                f"line {line_no}: {key} needs {shape[0] * shape[1]} values, "
                f"got {len(tokens)}"
            )
        values = [
            _parse_float(tok, line_no, line.index(tok) + 1) for tok in tokens
        ]
        found[key] = np.array(values).reshape(shape)
    for key in _CALIB_SHAPES:
        if key not in found:
            raise MissingField(f"calibration key {key!r} is missing")
    return KittiCalib(
        P2=found["P2"], R0_rect=found["R0_rect"], Tr_velo_to_cam=found["Tr_velo_to_cam"]
    )


def emit_calib(calib: KittiCalib) -> str:
    """Serialize a calibration; floats use repr so values round-trip exactly."""
    lines = []
    for key in _CALIB_SHAPES:
        mat = getattr(calib, key)
        lines.append(f"{key}: " + " ".join(repr(float(x)) for x in mat.ravel()))
    return "\n".join(lines) + "\n"


def parse_labels(text) -> list[KittiLabel]:
    """Parse a KITTI label file; DontCare entries are retained and flagged."""
    labels = []
    for line_no, line in enumerate(_as_text(text).splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split()
        if len(fields) < 15:
            raise ParseError(
                f"line {line_no}: expected 15 fields, got {len(fields)}",
                line=line_no,
            )

        def num(i):
            return _parse_float(fields[i], line_no, line.index(fields[i]) + 1)

        occ = num(2)
        if not np.isfinite(occ):
            raise ParseError(f"line {line_no}: occlusion level must be finite", line=line_no)
        labels.append(
            KittiLabel(
                type=fields[0],
                truncated=num(1),
                occluded=int(occ),
                alpha=num(3),
                bbox2d=(num(4), num(5), num(6), num(7)),
                h=num(8),
                w=num(9),
                l=num(10),
                location=(num(11), num(12), num(13)),
                rotation_y=num(14),
            )
        )
    return labels


def emit_labels(labels: list[KittiLabel]) -> str:
    lines = []
    for lb in labels:
        parts = [
            lb.type,
            repr(lb.truncated),
            str(lb.occluded),
            repr(lb.alpha),
            *(repr(x) for x in lb.bbox2d),
            repr(lb.h),
            repr(lb.w),
            repr(lb.l),
            *(repr(x) for x in lb.location),
            repr(lb.rotation_y),
        ]
        lines.append(" ".join(parts))
    return "\n".join(lines) + ("\n" if lines else "")


def read_velodyne(data: bytes) -> np.ndarray:
    """Decode a velodyne .bin payload into an (N, 4) float32 array (xyz + reflectance)."""
    if not isinstance(data, (bytes, bytearray)):
        raise TruncatedFile("velodyne payload must be bytes")
    if len(data) % 16 != 0:
        raise TruncatedFile(
            f"payload of {len(data)} bytes is not a whole number of 16-byte records"
        )
    return np.frombuffer(bytes(data), dtype="<f4").reshape(-1, 4).copy()


def write_velodyne(points: np.ndarray) -> bytes:
    return np.ascontiguousarray(points, dtype="<f4").reshape(-1, 4).tobytes()


def to_calibration(calib: KittiCalib) -> Calibration:
    """Compose P2, R0_rect, and Tr_velo_to_cam into a single pinhole model.

    P2 = [K | p4]; the composed model is u,v,d = K ([R | T] x) with
    R = R0_rect @ Tr_rot and T = R0_rect @ Tr_t + K^-1 p4.
    """
    K = calib.P2[:, :3]
    p4 = calib.P2[:, 3]
    if abs(np.linalg.det(K)) < 1e-12:
        raise DegenerateCalib("P2 intrinsic block is singular")
    R = calib.R0_rect @ calib.Tr_velo_to_cam[:, :3]
    T = calib.R0_rect @ calib.Tr_velo_to_cam[:, 3] + np.linalg.solve(K, p4)
    return Calibration(K=K, R=R, T=T)


def _rect_to_velo(calib: KittiCalib):
    """Rotation/translation taking rectified-camera coordinates to LiDAR."""
    rot = calib.R0_rect @ calib.Tr_velo_to_cam[:, :3]
    if abs(np.linalg.det(rot)) < 1e-9:
        raise DegenerateCalib("rectification/extrinsic composition is singular")
    t = calib.R0_rect @ calib.Tr_velo_to_cam[:, 3]
    inv = np.linalg.inv(rot)
    return inv, -inv @ t


def label_to_lidar_box(label: KittiLabel, calib: KittiCalib) -> Box3D:
    """Lift a camera-frame KITTI label to a LiDAR-frame box.

    The label location is the bottom center in the rectified camera frame
    (y down); the box center sits h/2 above it.  The heading converts by
    mapping the object's camera-frame x-axis direction into the LiDAR frame.
    """
    if label.is_dont_care:
        raise ValueError("DontCare labels carry no box")
    inv_rot, inv_t = _rect_to_velo(calib)
    bottom = np.asarray(label.location, dtype=float)
    center_cam = bottom + np.array([0.0, -label.h / 2.0, 0.0])
    center = inv_rot @ center_cam + inv_t
    # object x-axis in the rectified camera frame
    dir_cam = np.array([np.cos(label.rotation_y), 0.0, -np.sin(label.rotation_y)])
    dir_velo = inv_rot @ dir_cam
    yaw = float(np.arctan2(dir_velo[1], dir_velo[0]))
    return Box3D(center=center, l=label.l, w=label.w, h=label.h, yaw=yaw)


def lidar_box_to_label(
    box: Box3D, calib: KittiCalib, type_name: str = "Car"
) -> KittiLabel:
    """Inverse of :func:`label_to_lidar_box`; auxiliary fields are zeroed."""
    inv_rot, inv_t = _rect_to_velo(calib)
    rot = np.linalg.inv(inv_rot)
    center_cam = rot @ (box.center - inv_t)
    bottom = center_cam + np.array([0.0, box.h / 2.0, 0.0])
    dir_velo = np.array([np.cos(box.yaw), np.sin(box.yaw), 0.0])
    dir_cam = rot @ dir_velo
    ry = float(normalize_angle(np.arctan2(-dir_cam[2], dir_cam[0])))
    return KittiLabel(
        type=type_name,
        truncated=0.0,
        occluded=0,
        alpha=0.0,
        bbox2d=(0.0, 0.0, 0.0, 0.0),
        h=box.h,
        w=box.w,
        l=box.l,
        location=tuple(float(x) for x in bottom),
        rotation_y=ry,
    )


def filter_detection_range(points: np.ndarray, ranges=DETECTION_RANGE) -> np.ndarray:
    """Keep points inside the closed detection-range intervals, order preserved."""
    pts = np.asarray(points)
    if pts.size == 0:
        return pts.reshape(0, pts.shape[-1] if pts.ndim > 1 else 4)
    keep = np.ones(len(pts), dtype=bool)
    for axis, (lo, hi) in enumerate(ranges):
        keep &= (pts[:, axis] >= lo) & (pts[:, axis] <= hi)
    return pts[keep]


def _farthest_point_indices(xyz: np.ndarray, budget: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    n = len(xyz)
    chosen = np.empty(budget, dtype=int)
    chosen[0] = rng.integers(n)
    dist = np.linalg.norm(xyz - xyz[chosen[0]], axis=1)
    for i in range(1, budget):
        chosen[i] = int(np.argmax(dist))
        dist = np.minimum(dist, np.linalg.norm(xyz - xyz[chosen[i]], axis=1))
    return chosen


def downsample(
    points: np.ndarray, budget: int, seed: int, strategy: str = "random"
) -> np.ndarray:
    """Reduce a cloud to at most ``budget`` points.

    ``strategy`` is "random" (seeded uniform choice without replacement) or
    "fps" (farthest-point sampling from a seeded start).
    """
    pts = np.asarray(points)
    if budget <= 0:
        raise ValueError("budget must be positive")
    if len(pts) <= budget:
        return pts.copy()
    if strategy == "random":
        idx = np.random.default_rng(seed).choice(len(pts), size=budget, replace=False)
        return pts[np.sort(idx)]
    if strategy == "fps":
        return pts[_farthest_point_indices(pts[:, :3].astype(float), budget, seed)]
    raise ValueError(f"unknown strategy {strategy!r}")
