"""Binary PPM frames and JSON manifests."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import FormatError


def to_uint8(frame: np.ndarray) -> np.ndarray:
    """``[3, H, W]`` floats in [0, 1] -> ``[H, W, 3]`` uint8 (round half up)."""
    clipped = np.clip(np.asarray(frame, dtype=np.float64), 0.0, 1.0)
    return np.floor(clipped.transpose(1, 2, 0) * 255.0 + 0.5).astype(np.uint8)


def write_ppm(path, frame: np.ndarray) -> None:
    img = to_uint8(frame)
    h, w, _ = img.shape
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + img.tobytes())


def read_ppm(path) -> np.ndarray:
    """Read a P6/maxval-255 file back to ``[3, H, W]`` float32 in [0, 1]."""
    raw = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated PPM header")
        fields.append(raw[start:pos])
    pos += 1
    if fields[0] != b"P6" or fields[3] != b"255":
        raise FormatError(f"{path}: only binary P6 with maxval 255 is supported")
    w, h = int(fields[1]), int(fields[2])
    body = raw[pos:pos + w * h * 3]
    if len(body) != w * h * 3:
        raise FormatError(f"{path}: pixel payload truncated")
    img = np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3)
    return img.transpose(2, 0, 1).astype(np.float32) / 255.0


def write_frames(video: np.ndarray, out_dir) -> list[Path]:
    """Write ``[L, 3, H, W]`` frames as ``frame_000.ppm`` ... into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for k, frame in enumerate(video):
        p = out_dir / f"frame_{k:03d}.ppm"
        write_ppm(p, frame)
        paths.append(p)
    return paths


def read_frames(directory) -> np.ndarray:
    files = sorted(Path(directory).glob("frame_*.ppm"))
    if not files:
        raise FormatError(f"no frame_*.ppm files in {directory}")
    return np.stack([read_ppm(f) for f in files])


def write_manifest(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def read_manifest(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON manifest ({exc})") from None
