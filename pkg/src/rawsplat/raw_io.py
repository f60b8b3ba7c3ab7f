"""Bayer raw frame container and on-disk format (16-bit PGM mosaic + JSON sidecar).

A capture is stored as two files: the mosaic itself as a binary P5 PGM with
maxval 65535 (big-endian samples, row-major), and a JSON sidecar carrying the
sensor metadata the rest of the pipeline consumes (levels, CFA, noise model,
white balance, color matrix). Conversion from vendor raw containers into this
pair is external tooling.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

# Canonical 2x2 CFA tiles. Each maps (row % 2, col % 2) -> channel index
# (0=R, 1=G, 2=B). Greens sit on a diagonal in all four.
CFA_PATTERNS = {
    "RGGB": ((0, 1), (1, 2)),
    "BGGR": ((2, 1), (1, 0)),
    "GRBG": ((1, 0), (2, 1)),
    "GBRG": ((1, 2), (0, 1)),
}

# Older sidecars spell BGGR with the rows transposed; normalize on input.
_CFA_ALIASES = {"BGRG": "BGGR"}

SIDECAR_KEYS = (
    "width",
    "height",
    "cfa",
    "bit_depth",
    "black_level",
    "white_level",
    "iso_gain",
    "noise_k",
    "noise_sigma2",
    "wb_gains",
    "ccm",
)

# Values this far below zero are legitimate after black-level subtraction and
# denoising; clipping harder would bias dark-region statistics.
NEGATIVE_FLOOR = -0.05


class RawFormatError(ValueError):
    """Malformed mosaic/sidecar file or an invariant violation."""


def canonical_cfa(name: str) -> str:
    name = str(name).upper()
    name = _CFA_ALIASES.get(name, name)
    if name not in CFA_PATTERNS:
        raise RawFormatError(f"unknown CFA pattern {name!r}")
    return name


def cfa_channel_map(cfa: str, height: int, width: int) -> np.ndarray:
    """Per-pixel channel index (0/1/2) for a mosaic of the given CFA."""
    tile = np.array(CFA_PATTERNS[canonical_cfa(cfa)], dtype=np.int8)
    reps = (height + 1) // 2, (width + 1) // 2
    return np.tile(tile, reps)[:height, :width]


@dataclass
class RawFrame:
    """One Bayer mosaic plus the sensor metadata needed to linearize it."""

    width: int
    height: int
    cfa: str
    bit_depth: int
    black_level: float
    white_level: float
    data: np.ndarray  # (height, width) uint16 sensor counts
    iso_gain: float
    noise_k: float  # shot-noise slope, variance per normalized count
    noise_sigma2: float  # read-noise variance, normalized units^2
    wb_gains: np.ndarray  # (3,) R,G,B multipliers
    ccm: np.ndarray  # (3,3) row-major, rows sum to 1

    def validate(self) -> None:
        if self.width % 2 or self.height % 2:
            raise RawFormatError(
                f"frame dimensions must be even (got {self.width}x{self.height})"
            )
        if self.data.shape != (self.height, self.width):
            raise RawFormatError(
                f"data shape {self.data.shape} does not match "
                f"{self.height}x{self.width} header"
            )
        if self.data.dtype != np.uint16:
            raise RawFormatError(f"data must be uint16, got {self.data.dtype}")
        max_code = (1 << self.bit_depth) - 1
        peak = int(self.data.max()) if self.data.size else 0
        if peak > max_code:
            raise RawFormatError(
                f"sample exceeds bit depth: {peak} > 2^{self.bit_depth}-1 = {max_code}"
            )
        if not (0 <= self.black_level < self.white_level <= max_code):
            raise RawFormatError(
                f"need 0 <= black ({self.black_level}) < white ({self.white_level})"
                f" <= {max_code}"
            )
        canonical_cfa(self.cfa)
        wb = np.asarray(self.wb_gains, dtype=np.float64)
        if wb.shape != (3,) or not np.all(wb > 0):
            raise RawFormatError("wb_gains must be three positive multipliers")
        ccm = np.asarray(self.ccm, dtype=np.float64)
        if ccm.shape != (3, 3):
            raise RawFormatError("ccm must be 3x3")
        row_sums = ccm.sum(axis=1)
        if np.any(np.abs(row_sums - 1.0) > 1e-6):
            raise RawFormatError(
                f"ccm rows must sum to 1 (white-preserving), got {row_sums}"
            )
        if self.noise_k <= 0 or self.noise_sigma2 < 0:
            raise RawFormatError("noise_k must be > 0 and noise_sigma2 >= 0")


@dataclass
class BayerPlane:
    """Normalized linear mosaic, the domain of denoising and the k-sigma map."""

    width: int
    height: int
    cfa: str
    data: np.ndarray  # (height, width) float64, nominally [0, 1]

    def validate(self) -> None:
        if self.data.shape != (self.height, self.width):
            raise RawFormatError(
                f"plane shape {self.data.shape} does not match "
                f"{self.height}x{self.width}"
            )
        canonical_cfa(self.cfa)
        if not np.all(np.isfinite(self.data)):
            raise RawFormatError("plane contains non-finite values")
        if self.data.size and self.data.min() < NEGATIVE_FLOOR - 1e-12:
            raise RawFormatError(
                f"plane value {self.data.min():.6g} below floor {NEGATIVE_FLOOR}"
            )


def _read_pgm16(path: Path) -> np.ndarray:
    """Binary P5 with maxval 65535; returns (H, W) uint16."""
    blob = Path(path).read_bytes()
    if blob[:2] != b"P5":
        raise RawFormatError(f"{path}: not a binary PGM (missing P5 magic)")
    # Header = magic, width, height, maxval as whitespace-separated tokens,
    # with '#' comments running to end of line.
    tokens = []
    pos = 2
    while len(tokens) < 3:
        if pos >= len(blob):
            raise RawFormatError(f"{path}: truncated PGM header")
        c = blob[pos : pos + 1]
        if c == b"#":
            nl = blob.find(b"\n", pos)
            pos = len(blob) if nl < 0 else nl + 1
        elif c.isspace():
            pos += 1
        else:
            end = pos
            while end < len(blob) and not blob[end : end + 1].isspace():
                end += 1
            tokens.append(blob[pos:end])
            pos = end
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise RawFormatError(f"{path}: non-numeric PGM header token") from exc
    if maxval != 65535:
        raise RawFormatError(f"{path}: expected maxval 65535, got {maxval}")
    pos += 1  # single whitespace byte after maxval
    payload = blob[pos:]
    expected = width * height * 2
    if len(payload) != expected:
        raise RawFormatError(
            f"{path}: payload is {len(payload)} bytes, header implies {expected}"
        )
    data = np.frombuffer(payload, dtype=">u2").astype(np.uint16)
    return data.reshape(height, width)


def _write_pgm16(path: Path, data: np.ndarray) -> None:
    header = f"P5\n{data.shape[1]} {data.shape[0]}\n65535\n".encode("ascii")
    Path(path).write_bytes(header + data.astype(">u2").tobytes())


def load_raw_frame(mosaic_path, sidecar_path) -> RawFrame:
    """Load a PGM + sidecar pair and return a validated RawFrame."""
    data = _read_pgm16(Path(mosaic_path))
    try:
        meta = json.loads(Path(sidecar_path).read_text())
    except json.JSONDecodeError as exc:
        raise RawFormatError(f"{sidecar_path}: invalid JSON sidecar") from exc
    missing = [k for k in SIDECAR_KEYS if k not in meta]
    if missing:
        raise RawFormatError(f"{sidecar_path}: missing sidecar fields {missing}")
    if (meta["height"], meta["width"]) != data.shape:
        raise RawFormatError(
            f"sidecar says {meta['width']}x{meta['height']} but mosaic is "
            f"{data.shape[1]}x{data.shape[0]}"
        )
    frame = RawFrame(
        width=int(meta["width"]),
        height=int(meta["height"]),
        cfa=canonical_cfa(meta["cfa"]),
        bit_depth=int(meta["bit_depth"]),
        black_level=float(meta["black_level"]),
        white_level=float(meta["white_level"]),
        data=data,
        iso_gain=float(meta["iso_gain"]),
        noise_k=float(meta["noise_k"]),
        noise_sigma2=float(meta["noise_sigma2"]),
        wb_gains=np.asarray(meta["wb_gains"], dtype=np.float64),
        ccm=np.asarray(meta["ccm"], dtype=np.float64),
    )
    frame.validate()
    return frame


def save_raw_frame(frame: RawFrame, mosaic_path, sidecar_path) -> None:
    """Write the PGM + sidecar pair; load_raw_frame inverts it exactly."""
    frame.validate()
    meta = {
        "width": frame.width,
        "height": frame.height,
        "cfa": frame.cfa,
        "bit_depth": frame.bit_depth,
        "black_level": frame.black_level,
        "white_level": frame.white_level,
        "iso_gain": frame.iso_gain,
        "noise_k": frame.noise_k,
        "noise_sigma2": frame.noise_sigma2,
        "wb_gains": np.asarray(frame.wb_gains, dtype=np.float64).tolist(),
        "ccm": np.asarray(frame.ccm, dtype=np.float64).tolist(),
    }
    _write_pgm16(Path(mosaic_path), frame.data)
    Path(sidecar_path).write_text(json.dumps(meta, indent=1) + "\n")


def normalize(frame: RawFrame) -> BayerPlane:
    """Map sensor counts to linear values with black at 0 and white at 1."""
    frame.validate()
    span = frame.white_level - frame.black_level
    values = (frame.data.astype(np.float64) - frame.black_level) / span
    np.clip(values, NEGATIVE_FLOOR, None, out=values)
    return BayerPlane(width=frame.width, height=frame.height, cfa=frame.cfa, data=values)
