"""On-disk artifact formats: counts, reflectivity images, traces and manifests."""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
import platform
from pathlib import Path

import numpy as np

from .photoncount import AcquisitionParams, CountMatrix

COUNTS_FORMAT = "occlusight-counts"
MANIFEST_NAME = "manifest.json"


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write_text(path, text: str) -> None:
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write(text)


def write_matrix_csv(path, values, fmt: str = "{:.9g}") -> None:
    a = np.asarray(values)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-D array, got shape {a.shape}")
    lines = [",".join(fmt.format(v) for v in row) for row in a.tolist()]
    _write_text(path, "\n".join(lines) + "\n")


def read_matrix_csv(path) -> np.ndarray:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                rows.append([float(x) for x in line.split(",")])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric entry") from None
    if not rows or len({len(r) for r in rows}) != 1:
        raise ValueError(f"{path}: rows are empty or ragged")
    return np.array(rows, dtype=float)


# ------------------------------------------------------------ counts

def write_counts(path, R: CountMatrix) -> Path:
    """Write ``R`` as an integer CSV plus a ``.json`` sidecar; returns the sidecar path."""
    path = Path(path)
    write_matrix_csv(path, R.counts, "{:d}")
    B = R.params.background
    meta = {"format": COUNTS_FORMAT, "version": 1, "m": R.m,
            "pulses": R.params.pulses, "efficiency": R.params.efficiency,
            "seed": R.seed}
    if np.all(B == B.flat[0]):
        meta["background"] = {"constant": float(B.flat[0])}
    else:
        bg = path.with_name(path.stem + "-background.csv")
        write_matrix_csv(bg, B, "{!r}")
        meta["background"] = {"file": bg.name}
    sidecar = path.with_suffix(".json")
    _write_text(sidecar, json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return sidecar


def read_counts(path) -> CountMatrix:
    path = Path(path)
    sidecar = path.with_suffix(".json")
    meta = json.loads(sidecar.read_text(encoding="utf-8"))
    if meta.get("format") != COUNTS_FORMAT:
        raise ValueError(f"{sidecar}: not a counts sidecar")
    counts = read_matrix_csv(path)
    if counts.shape != (meta["m"], meta["m"]):
        raise ValueError(f"{path}: shape {counts.shape} does not match sidecar m={meta['m']}")
    bg = meta["background"]
    if "constant" in bg:
        B = np.full(counts.shape, float(bg["constant"]))
    else:
        B = read_matrix_csv(path.with_name(bg["file"]))
    params = AcquisitionParams(int(meta["pulses"]), float(meta["efficiency"]), B)
    return CountMatrix(counts.astype(np.int64), params, meta.get("seed"))


# ------------------------------------------------------------ images

def write_reflectivity(path, F) -> None:
    """Reflectivity estimate as CSV with 9 significant digits."""
    write_matrix_csv(path, np.asarray(F, dtype=float))


def pgm_bytes(image) -> bytes:
    a = np.asarray(image, dtype=float)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("image contains non-finite values")
    # half-up rounding: floor(x + 1/2), so 0.5 * 255 = 127.5 maps to 128
    q = np.floor(np.clip(a, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    header = f"P5\n{a.shape[1]} {a.shape[0]}\n255\n".encode("ascii")
    return header + q.tobytes(order="C")


def render_pgm(image, path) -> None:
    """Write a binary 8-bit PGM after clamping to [0, 1]."""
    data = pgm_bytes(image)
    with open(path, "wb") as fh:
        fh.write(data)


def _pgm_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated PGM header")
        tokens.append(data[start:pos])
    return tokens, pos


def read_pgm(path) -> np.ndarray:
    """Read a P5 or P2 graymap scaled to [0, 1]."""
    data = Path(path).read_bytes()
    (magic, w, h, maxval), pos = _pgm_tokens(data, 4)
    w, h, maxval = int(w), int(h), int(maxval)
    if not 0 < maxval < 65536:
        raise ValueError(f"{path}: bad maxval {maxval}")
    if magic == b"P5":
        pos += 1
        dtype = np.uint8 if maxval < 256 else ">u2"
        px = np.frombuffer(data, dtype=dtype, count=w * h, offset=pos)
    elif magic == b"P2":
        px = np.array(data[pos:].split()[:w * h], dtype=float)
    else:
        raise ValueError(f"{path}: unsupported PGM magic {magic!r}")
    if px.size != w * h:
        raise ValueError(f"{path}: truncated pixel data")
    return px.reshape(h, w).astype(float) / maxval


def read_image(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        return read_pgm(path)
    return read_matrix_csv(path)


def write_trace(path, trace) -> None:
    lines = ["iteration,objective"]
    lines += [f"{i},{v:.17g}" for i, v in enumerate(trace)]
    _write_text(path, "\n".join(lines) + "\n")


def write_json(path, obj) -> None:
    _write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ------------------------------------------------------------ manifest

def versions() -> dict:
    import scipy
    from . import __version__
    return {"occlusight": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def write_manifest(out_dir, command: str, config_hash: str, seed, extra: dict | None = None,
                   now: _dt.datetime | None = None) -> Path:
    """List every file in ``out_dir`` with its SHA-256.

    The timestamp lives only here, so the other artifacts stay byte-identical
    across reruns.
    """
    out_dir = Path(out_dir)
    files = sorted(p for p in out_dir.rglob("*") if p.is_file() and p.name != MANIFEST_NAME)
    now = now or _dt.datetime.now(_dt.timezone.utc)
    manifest = {
        "command": command,
        "config_hash": config_hash,
        "seed": seed,
        "versions": versions(),
        "created": now.isoformat(timespec="seconds"),
        "artifacts": {p.relative_to(out_dir).as_posix(): sha256_file(p) for p in files},
    }
    if extra:
        manifest.update(extra)
    path = out_dir / MANIFEST_NAME
    write_json(path, manifest)
    return path
