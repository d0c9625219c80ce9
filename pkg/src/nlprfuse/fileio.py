"""On-disk formats: ``.mbi`` multiband rasters, ``key=value`` configs, PGM previews.

An ``.mbi`` file is a short ASCII header followed by raw little-endian
float64 samples stored band by band, each band row-major::

    MBI 1
    p 32
    q 32
    L 8
    width 8
    endian little
    order band-major
    min 0.0          (optional)
    max 1.0          (optional)
    end
"""

from __future__ import annotations

import math
from dataclasses import fields
from pathlib import Path

import numpy as np

from .grid import MultibandImage

MAGIC = "MBI 1"

# (lam1, lam2, rho, h, L_s)
PRESETS = {
    "cave": dict(lam1=0.7, lam2=1e-4, rho=1e-3, h=0.15, L_s=8),
    "pavia": dict(lam1=0.8, lam2=2e-4, rho=1e-3, h=0.15, L_s=20),
    "chikusei": dict(lam1=1.0, lam2=1e-3, rho=0.095, h=0.25, L_s=20),
    "pleiades": dict(lam1=0.85, lam2=9e-3, rho=1e-3, h=0.17, L_s=4),
}


class FormatError(ValueError):
    """Malformed file contents."""


def write_mbi(path, img, record_range: bool = True) -> Path:
    """Write a ``MultibandImage`` or ``(p, q, L)`` cube."""
    cube = img.cube if isinstance(img, MultibandImage) else np.asarray(img, dtype=np.float64)
    if cube.ndim == 2:
        cube = cube[:, :, None]
    p, q, L = cube.shape
    lines = [MAGIC, f"p {p}", f"q {q}", f"L {L}", "width 8", "endian little", "order band-major"]
    if record_range and cube.size:
        lines += [f"min {float(cube.min())!r}", f"max {float(cube.max())!r}"]
    lines.append("end")
    path = Path(path)
    payload = np.ascontiguousarray(cube.transpose(2, 0, 1), dtype="<f8").tobytes()
    path.write_bytes(("\n".join(lines) + "\n").encode("ascii") + payload)
    return path


def read_mbi_header(raw: bytes) -> tuple[dict, int]:
    head = {}
    pos = 0
    first = True
    while True:
        nl = raw.find(b"\n", pos)
        if nl < 0:
            raise FormatError("unterminated .mbi header")
        line = raw[pos:nl].decode("ascii", errors="replace").strip()
        pos = nl + 1
        if first:
            if line != MAGIC:
                raise FormatError(f"bad magic {line!r}")
            first = False
            continue
        if line == "end":
            break
        key, _, val = line.partition(" ")
        head[key] = val.strip()
    for key in ("p", "q", "L"):
        if key not in head:
            raise FormatError(f"header misses {key!r}")
    if head.get("width", "8") != "8" or head.get("endian", "little") != "little":
        raise FormatError("only little-endian 8-byte floats are supported")
    if head.get("order", "band-major") != "band-major":
        raise FormatError("only band-major order is supported")
    return head, pos


def read_mbi(path) -> MultibandImage:
    raw = Path(path).read_bytes()
    head, pos = read_mbi_header(raw)
    p, q, L = int(head["p"]), int(head["q"]), int(head["L"])
    need = p * q * L * 8
    if len(raw) - pos != need:
        raise FormatError(f"{path}: expected {need} data bytes, found {len(raw) - pos}")
    bands = np.frombuffer(raw, dtype="<f8", offset=pos).reshape(L, p, q)
    return MultibandImage.from_cube(bands.transpose(1, 2, 0).astype(np.float64))


def write_pgm(path, band: np.ndarray, lo: float | None = None, hi: float | None = None) -> tuple[float, float]:
    """8-bit binary PGM with linear scaling of ``[lo, hi]`` to ``[0, 255]``; range kept as a comment."""
    band = np.asarray(band, dtype=np.float64)
    lo = float(band.min()) if lo is None else lo
    hi = float(band.max()) if hi is None else hi
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    pix = np.clip(np.rint((band - lo) * scale), 0, 255).astype(np.uint8)
    header = f"P5\n# min {lo!r} max {hi!r}\n{band.shape[1]} {band.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + pix.tobytes())
    return lo, hi


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end:end + 1].isspace():
            end += 1
        tokens.append(raw[pos:end].decode("ascii"))
        pos = end
    if tokens[0] != "P5":
        raise FormatError("not a binary PGM")
    w, h = int(tokens[1]), int(tokens[2])
    return np.frombuffer(raw, dtype=np.uint8, offset=pos + 1, count=w * h).reshape(h, w)


# ---------------------------------------------------------------- configs


def _coerce(text: str, default):
    text = text.strip()
    if isinstance(default, bool):
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if default is None:
        if text.lower() in ("", "none"):
            return None
        return text
    return text


def parse_config(text: str, schema: dict) -> dict:
    """Parse ``key = value`` lines; ``schema`` maps every allowed key to its default.

    Blank lines and ``#`` comments are skipped; unknown or repeated keys raise.
    """
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {n}: expected key=value, got {line!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in schema:
            raise KeyError(f"line {n}: unknown key {key!r}")
        if key in out:
            raise KeyError(f"line {n}: key {key!r} given twice")
        try:
            out[key] = _coerce(val, schema[key])
        except ValueError as exc:
            raise ValueError(f"line {n}: bad value for {key}: {exc}") from None
    return out


def format_value(v) -> str:
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")
    return str(v)


def dump_config(values: dict) -> str:
    return "".join(f"{k} = {format_value(v)}\n" for k, v in values.items())


def dataclass_schema(cls) -> dict:
    """Defaults of a dataclass as a ``parse_config`` schema."""
    schema = {}
    for f in fields(cls):
        schema[f.name] = f.default
    return schema


def matrix_to_text(M: np.ndarray) -> str:
    return ";".join(",".join(repr(float(v)) for v in row) for row in np.atleast_2d(M))


def matrix_from_text(text: str) -> np.ndarray:
    return np.array([[float(v) for v in row.split(",")] for row in text.split(";")])

