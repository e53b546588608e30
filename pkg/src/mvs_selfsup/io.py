"""Readers and writers for camera text files, PFM depth maps, PLY clouds and PNGs."""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import Camera, CameraIntrinsics, CameraPose


class FormatError(ValueError):
    """A file does not follow the expected grammar."""


def _fmt(x: float) -> str:
    return repr(float(x))


def format_camera(cam: Camera) -> str:
    ext = cam.extrinsic.matrix
    k = cam.intrinsics.matrix
    lines = ["extrinsic"]
    lines += [" ".join(_fmt(x) for x in row) for row in ext]
    lines += ["", "intrinsic"]
    lines += [" ".join(_fmt(x) for x in row) for row in k]
    lines += ["", f"{_fmt(cam.depth_min)} {_fmt(cam.depth_max)}"]
    return "\n".join(lines) + "\n"


def parse_camera(text: str) -> Camera:
    lines = [ln.strip() for ln in text.strip().splitlines()]
    try:
        if lines[0] != "extrinsic" or lines[5] != "" or lines[6] != "intrinsic" or lines[10] != "":
            raise FormatError("camera file section headers not found")
        ext = np.array([[float(x) for x in lines[i].split()] for i in range(1, 5)])
        k = np.array([[float(x) for x in lines[i].split()] for i in range(7, 10)])
        d_min, d_max = (float(x) for x in lines[11].split())
    except (IndexError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"malformed camera file: {exc}") from exc
    if ext.shape != (4, 4) or k.shape != (3, 3):
        raise FormatError("camera matrices have wrong shape")
    return Camera(CameraIntrinsics.from_matrix(k), CameraPose.from_matrix(ext), d_min, d_max)


def write_camera(path, cam: Camera) -> None:
    Path(path).write_text(format_camera(cam))


def read_camera(path) -> Camera:
    return parse_camera(Path(path).read_text())


def write_pfm(path, data: np.ndarray) -> None:
    """Write a little-endian PFM (scale -1). Rows are stored bottom-up."""
    data = np.asarray(data, dtype="<f4")
    if data.ndim == 2:
        header = "Pf"
    elif data.ndim == 3 and data.shape[2] == 3:
        header = "PF"
    else:
        raise ValueError(f"PFM supports (H, W) or (H, W, 3), got {data.shape}")
    h, w = data.shape[:2]
    with open(path, "wb") as f:
        f.write(f"{header}\n{w} {h}\n-1.0\n".encode("ascii"))
        f.write(np.ascontiguousarray(np.flipud(data)).tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.readline().rstrip()
        if header not in (b"PF", b"Pf"):
            raise FormatError("not a PFM file")
        dims = re.match(rb"^(\d+)\s+(\d+)\s*$", f.readline())
        if not dims:
            raise FormatError("malformed PFM dimensions")
        w, h = int(dims.group(1)), int(dims.group(2))
        scale = float(f.readline().rstrip())
        dtype = "<f4" if scale < 0 else ">f4"
        channels = 3 if header == b"PF" else 1
        data = np.frombuffer(f.read(), dtype=dtype)
    if data.size != w * h * channels:
        raise FormatError("PFM payload size does not match header")
    shape = (h, w, 3) if channels == 3 else (h, w)
    return np.flipud(data.reshape(shape)).astype(np.float64)


def write_png(path, image: np.ndarray) -> None:
    """Save a [0, 1] float image (or uint8 array) as 8-bit PNG."""
    image = np.asarray(image)
    if image.dtype != np.uint8:
        image = np.round(np.clip(image, 0.0, 1.0) * 255).astype(np.uint8)
    if image.ndim == 3 and image.shape[2] == 1:
        image = image[..., 0]
    Image.fromarray(image).save(path)


def read_png(path) -> np.ndarray:
    return np.asarray(Image.open(path), dtype=np.float64) / 255.0


def write_ply(path, points: np.ndarray, colors: np.ndarray | None = None) -> None:
    """ASCII PLY with float xyz and optional uchar rgb."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(points)}",
        "property float x",
        "property float y",
        "property float z",
    ]
    if colors is not None:
        colors = np.asarray(colors).reshape(-1, 3)
        if colors.dtype != np.uint8:
            colors = np.round(np.clip(colors, 0, 1) * 255).astype(np.uint8)
        lines += ["property uchar red", "property uchar green", "property uchar blue"]
    lines.append("end_header")
    for i, p in enumerate(points):
        row = f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g}"
        if colors is not None:
            c = colors[i]
            row += f" {c[0]} {c[1]} {c[2]}"
        lines.append(row)
    Path(path).write_text("\n".join(lines) + "\n")


def read_ply(path) -> tuple[np.ndarray, np.ndarray | None]:
    """Read an ASCII PLY vertex list; returns (points, colors or None)."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise FormatError("missing 'ply' magic")
    n = None
    props: list[str] = []
    end = None
    for i, ln in enumerate(lines[1:], start=1):
        tok = ln.split()
        if not tok:
            continue
        if tok[0] == "format" and tok[1:2] != ["ascii"]:
            raise FormatError("only ASCII PLY is supported")
        if tok[0] == "element" and len(tok) == 3 and tok[1] == "vertex":
            n = int(tok[2])
        elif tok[0] == "property" and len(tok) == 3:
            props.append(tok[2])
        elif tok[0] == "end_header":
            end = i
            break
    if end is None or n is None or props[:3] != ["x", "y", "z"]:
        raise FormatError("truncated or malformed PLY header")
    body = lines[end + 1 : end + 1 + n]
    if len(body) != n:
        raise FormatError(f"expected {n} vertices, found {len(body)}")
    try:
        data = np.array([[float(x) for x in ln.split()] for ln in body]).reshape(n, len(props))
    except ValueError as exc:
        raise FormatError(f"malformed PLY vertex data: {exc}") from exc
    colors = None
    if {"red", "green", "blue"} <= set(props):
        idx = [props.index(c) for c in ("red", "green", "blue")]
        colors = data[:, idx].astype(np.uint8)
    return data[:, :3], colors
