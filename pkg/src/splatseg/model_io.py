"""Bit-exact file formats shared by the CLI and the viewer.

Scenes are binary little-endian PLY files: one `vertex` element whose 30
float32 properties are, in order,

    x y z  scale_0..2 (log)  rot_0..3 (w,x,y,z)  opacity (logit)
    red_f green_f blue_f (linear [0,1])  seg_0..seg_15

with a `comment splatseg_version 1` header line. Third-party splat viewers
can open the geometry subset; the seg_* extension properties are ignored by
them harmlessly. Cameras are line-delimited text, masks are 16-bit binary
PGM (P5, maxval 65535, value = instance ID), color images are 16-bit binary
PPM (P6), and configs are flat `key = value` text. Every parser returns
either a value or a ParseError — arbitrary bytes never crash.
"""

from __future__ import annotations

import difflib
from dataclasses import dataclass, fields

import numpy as np

from .core_model import Camera, FEATURE_DIM, SceneModel
from .errors import DataError, ParseError
from .losses import LossConfig
from .segmentation import (MIN_COMPONENT_PIXELS, OUTLIER_NEIGHBORS,
                           OUTLIER_SIGMA, RECOVERY_FRACTION, SIMILARITY_T)
from .metrics import BOUNDARY_RADIUS
from .trainer import TrainConfig

VERSION_COMMENT = "splatseg_version 1"
SCENE_PROPERTIES = (
    "x", "y", "z", "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3", "opacity",
    "red_f", "green_f", "blue_f",
) + tuple(f"seg_{i}" for i in range(FEATURE_DIM))
POINT_PROPERTIES = ("x", "y", "z", "red_f", "green_f", "blue_f")
CAMERA_ORTHONORMAL_TOL = 1e-4
MAX_ELEMENTS = 100_000_000  # sanity cap against absurd headers


# --------------------------------------------------------------------------
# PLY
# --------------------------------------------------------------------------

def _ply_header(count: int, properties, comment: str) -> bytes:
    lines = ["ply", "format binary_little_endian 1.0", f"comment {comment}",
             f"element vertex {count}"]
    lines += [f"property float {name}" for name in properties]
    lines.append("end_header")
    return ("\n".join(lines) + "\n").encode("ascii")


def _write_ply(path, table: np.ndarray, properties, comment: str) -> None:
    payload = np.ascontiguousarray(table, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_ply_header(len(table), properties, comment))
        fh.write(payload.tobytes())


def _read_ply(path, properties) -> np.ndarray:
    """Parse a binary PLY with exactly the given float properties; returns
    the float32 payload as an (N, P) float64 array."""
    with open(path, "rb") as fh:
        data = fh.read()
    end_marker = b"end_header\n"
    end = data.find(end_marker)
    if end < 0:
        raise ParseError("missing end_header", offset=0)
    body_start = end + len(end_marker)
    try:
        header = data[:end].decode("ascii")
    except UnicodeDecodeError as exc:
        raise ParseError("header is not ASCII", offset=exc.start) from None

    lines = header.split("\n")
    offsets = np.cumsum([0] + [len(l) + 1 for l in lines])
    if not lines or lines[0] != "ply":
        raise ParseError("not a PLY file (missing 'ply' magic)", offset=0)
    if len(lines) < 2 or lines[1] != "format binary_little_endian 1.0":
        raise ParseError("expected 'format binary_little_endian 1.0'",
                         offset=int(offsets[1]))

    count = None
    seen: list[str] = []
    for line, off in zip(lines[2:], offsets[2:]):
        off = int(off)
        if line.startswith("comment") or line == "":
            continue
        parts = line.split()
        if parts[0] == "element":
            if count is not None:
                raise ParseError("multiple elements not supported", offset=off)
            if len(parts) != 3 or parts[1] != "vertex":
                raise ParseError(f"expected 'element vertex N', got '{line}'",
                                 offset=off)
            try:
                count = int(parts[2])
            except ValueError:
                raise ParseError(f"bad vertex count '{parts[2]}'", offset=off) from None
            if count < 0 or count > MAX_ELEMENTS:
                raise ParseError(f"unreasonable vertex count {count}", offset=off)
        elif parts[0] == "property":
            if count is None:
                raise ParseError("property before element", offset=off)
            if len(parts) != 3 or parts[1] != "float":
                raise ParseError(f"only 'property float NAME' supported, got '{line}'",
                                 offset=off)
            pos = len(seen)
            if pos >= len(properties) or parts[2] != properties[pos]:
                expected = properties[pos] if pos < len(properties) else "(none)"
                raise ParseError(
                    f"unexpected property '{parts[2]}', expected '{expected}'",
                    offset=off)
            seen.append(parts[2])
        else:
            raise ParseError(f"unrecognized header line '{line}'", offset=off)
    if count is None:
        raise ParseError("missing 'element vertex' declaration", offset=end)
    if len(seen) != len(properties):
        missing = properties[len(seen)]
        raise ParseError(f"missing property '{missing}'", offset=end)

    expected_bytes = count * len(properties) * 4
    body = data[body_start:]
    if len(body) != expected_bytes:
        raise ParseError(
            f"payload has {len(body)} bytes, expected {expected_bytes}",
            offset=body_start)
    table = np.frombuffer(body, dtype="<f4").reshape(count, len(properties))
    return table.astype(np.float64)


def write_scene(scene: SceneModel, path) -> None:
    table = np.concatenate([
        scene.positions, scene.log_scales, scene.rotations,
        scene.opacity_logits[:, None], scene.colors, scene.features,
    ], axis=1)
    _write_ply(path, table, SCENE_PROPERTIES, VERSION_COMMENT)


def read_scene(path) -> SceneModel:
    table = _read_ply(path, SCENE_PROPERTIES)
    if len(table) == 0:
        raise DataError("scene file contains no Gaussians")
    if not np.all(np.isfinite(table)):
        raise DataError("scene file contains non-finite values")
    return SceneModel(
        positions=table[:, 0:3], log_scales=table[:, 3:6], rotations=table[:, 6:10],
        opacity_logits=table[:, 10], colors=table[:, 11:14],
        features=table[:, 14:14 + FEATURE_DIM],
    )


def write_points(positions: np.ndarray, colors: np.ndarray, path) -> None:
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    colors = np.asarray(colors, dtype=np.float64).reshape(-1, 3)
    _write_ply(path, np.concatenate([positions, colors], axis=1),
               POINT_PROPERTIES, "splatseg_points 1")


def read_points(path):
    table = _read_ply(path, POINT_PROPERTIES)
    if len(table) == 0:
        raise DataError("point file contains no points")
    return table[:, 0:3], table[:, 3:6]


# --------------------------------------------------------------------------
# Cameras
# --------------------------------------------------------------------------

def write_cameras(cameras, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write("# id width height fx fy cx cy r00..r22 (world-to-camera, "
                 "row-major) tx ty tz\n")
        for cam in cameras:
            nums = [cam.fx, cam.fy, cam.cx, cam.cy,
                    *cam.rotation.ravel(), *cam.translation]
            fh.write(" ".join([str(cam.camera_id), str(cam.width), str(cam.height)]
                              + [f"{v:.17g}" for v in nums]) + "\n")


def read_cameras(path) -> list[Camera]:
    try:
        with open(path, "rb") as fh:
            text = fh.read().decode("ascii", errors="strict")
    except UnicodeDecodeError as exc:
        raise ParseError("camera file is not ASCII", offset=exc.start) from None
    cameras = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 19:
            raise ParseError(f"line {lineno}: expected 19 fields, got {len(parts)}")
        try:
            cam_id, width, height = (int(parts[0]), int(parts[1]), int(parts[2]))
            vals = [float(p) for p in parts[3:]]
        except ValueError as exc:
            raise ParseError(f"line {lineno}: {exc}") from None
        rot = np.array(vals[4:13]).reshape(3, 3)
        err = np.max(np.abs(rot @ rot.T - np.eye(3)))
        if err > CAMERA_ORTHONORMAL_TOL:
            raise ParseError(
                f"camera {cam_id}: rotation not orthonormal (error {err:.2e})")
        if np.linalg.det(rot) < 0:
            raise ParseError(f"camera {cam_id}: rotation is left-handed")
        try:
            cameras.append(Camera(
                fx=vals[0], fy=vals[1], cx=vals[2], cy=vals[3], rotation=rot,
                translation=np.array(vals[13:16]), width=width, height=height,
                camera_id=cam_id))
        except ValueError as exc:
            raise ParseError(f"camera {cam_id}: {exc}") from None
    return cameras


# --------------------------------------------------------------------------
# PGM masks / PPM images (16-bit binary)
# --------------------------------------------------------------------------

def _read_pnm_header(data: bytes, magic: bytes, path):
    """Parse 'P5/P6 W H MAXVAL' allowing comments; returns (w, h, maxval,
    payload offset)."""
    if data[:2] != magic:
        raise ParseError(f"not a {magic.decode()} file", offset=0)
    tokens = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            nl = data.find(b"\n", pos)
            if nl < 0:
                raise ParseError("unterminated comment in header", offset=pos)
            pos = nl + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if pos == start:
            raise ParseError("truncated header", offset=pos)
        tokens.append((data[start:pos], start))
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise ParseError("missing whitespace after maxval", offset=pos)
    pos += 1  # single whitespace byte separates header from payload
    out = []
    for token, off in tokens:
        try:
            value = int(token)
        except ValueError:
            raise ParseError(f"bad header token {token!r}", offset=off) from None
        out.append(value)
    width, height, maxval = out
    if width < 1 or height < 1 or width * height > MAX_ELEMENTS:
        raise ParseError(f"unreasonable image size {width}x{height}", offset=0)
    if maxval != 65535:
        raise ParseError(f"maxval {maxval}, expected 65535", offset=0)
    return width, height, maxval, pos


def write_mask(ids: np.ndarray, path) -> None:
    ids = np.asarray(ids)
    if ids.ndim != 2:
        raise ValueError("mask must be 2-D")
    if ids.min() < 0 or ids.max() > 65535:
        raise ValueError("mask IDs must fit in uint16")
    h, w = ids.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(ids.astype(">u2").tobytes())


def read_mask(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    width, height, _, pos = _read_pnm_header(data, b"P5", path)
    expected = width * height * 2
    body = data[pos:]
    if len(body) != expected:
        raise ParseError(f"payload has {len(body)} bytes, expected {expected}",
                         offset=pos)
    return np.frombuffer(body, dtype=">u2").reshape(height, width).astype(np.int32)


def write_image(image: np.ndarray, path) -> None:
    """Color image (H, W, 3) in [0, 1] as 16-bit binary PPM."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError("image must be (H, W, 3)")
    h, w, _ = image.shape
    quant = np.round(np.clip(image, 0.0, 1.0) * 65535.0).astype(">u2")
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(quant.tobytes())


def read_image(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    width, height, _, pos = _read_pnm_header(data, b"P6", path)
    expected = width * height * 6
    body = data[pos:]
    if len(body) != expected:
        raise ParseError(f"payload has {len(body)} bytes, expected {expected}",
                         offset=pos)
    pixels = np.frombuffer(body, dtype=">u2").reshape(height, width, 3)
    return pixels.astype(np.float64) / 65535.0


# --------------------------------------------------------------------------
# Config
# --------------------------------------------------------------------------

@dataclass
class SegConfig:
    """Inference-time constants (2D clustering and 3D extraction)."""

    t: float = SIMILARITY_T
    boundary_radius: int = BOUNDARY_RADIUS
    min_component_pixels: int = MIN_COMPONENT_PIXELS
    outlier_neighbors: int = OUTLIER_NEIGHBORS
    outlier_sigma: float = OUTLIER_SIGMA
    recovery_fraction: float = RECOVERY_FRACTION

    def __post_init__(self):
        if not (0.0 < self.t < 1.0):
            raise ValueError("t must lie in (0, 1)")
        if self.boundary_radius < 1 or self.min_component_pixels < 1:
            raise ValueError("boundary_radius and min_component_pixels must be >= 1")


@dataclass
class Config:
    train: TrainConfig
    loss: LossConfig
    seg: SegConfig


def parse_config(text: str) -> Config:
    """Flat `key = value` text; unknown keys are rejected with a suggestion.
    All keys are optional; an empty file yields all defaults."""
    sections = {"train": TrainConfig, "loss": LossConfig, "seg": SegConfig}
    known: dict[str, tuple[str, str]] = {}
    for sec, cls in sections.items():
        for f in fields(cls):
            known[f.name] = (sec, f.type)
    values: dict[str, dict] = {sec: {} for sec in sections}

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"line {lineno}: expected 'key = value', got '{raw.strip()}'")
        key, _, value = (s.strip() for s in line.partition("="))
        if key not in known:
            hint = difflib.get_close_matches(key, known.keys(), n=1)
            suffix = f" (did you mean '{hint[0]}'?)" if hint else ""
            raise ParseError(f"line {lineno}: unknown key '{key}'{suffix}")
        section, ftype = known[key]
        try:
            parsed = int(value) if ftype == "int" else float(value)
        except ValueError:
            raise ParseError(
                f"line {lineno}: bad value '{value}' for '{key}'") from None
        values[section][key] = parsed
    try:
        return Config(train=TrainConfig(**values["train"]),
                      loss=LossConfig(**values["loss"]),
                      seg=SegConfig(**values["seg"]))
    except ValueError as exc:
        raise ParseError(str(exc)) from None


def read_config(path) -> Config:
    with open(path, "rb") as fh:
        data = fh.read()
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError("config file is not UTF-8", offset=exc.start) from None
    return parse_config(text)
