"""Radiance RGBE (.hdr) reader and writer.

Reads flat and new-style RLE scanlines; writes new-style RLE.  Pixels use a
shared 8-bit exponent with 8-bit mantissas, so round trips are exact only up
to ~1/256 relative error (measured against the largest channel of a pixel).
"""

from __future__ import annotations

import os

import numpy as np

__all__ = ["HdrFormatError", "load_hdr", "save_hdr"]

_HEADER_MAGIC = (b"#?RADIANCE", b"#?RGBE")


class HdrFormatError(ValueError):
    """Malformed or unsupported .hdr content; ``code`` names the failure."""

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


def _float_to_rgbe(rgb: np.ndarray) -> np.ndarray:
    h, w = rgb.shape[:2]
    out = np.zeros((h, w, 4), dtype=np.uint8)
    maxc = rgb.max(axis=2)
    nz = maxc >= 1e-32
    if np.any(nz):
        m = maxc[nz]
        exp = np.ceil(np.log2(m)).astype(np.int32)
        scale = np.exp2(-exp.astype(np.float64)) * 256.0
        # keep the rounded max channel below 256
        too_big = np.floor(m * scale + 0.5) > 255
        exp[too_big] += 1
        scale[too_big] *= 0.5
        if np.any(exp + 128 > 255):
            raise ValueError("radiance too large for RGBE encoding")
        under = exp + 128 < 1  # below RGBE range, flushes to zero
        quant = np.floor(rgb[nz] * scale[:, None] + 0.5).astype(np.uint8)
        quant[under] = 0
        out[nz, :3] = quant
        out[nz, 3] = np.where(under, 0, exp + 128).astype(np.uint8)
    return out


def _rgbe_to_float(rgbe: np.ndarray) -> np.ndarray:
    exp = rgbe[..., 3].astype(np.int32)
    scale = np.where(exp == 0, 0.0, np.exp2(exp - (128 + 8), dtype=np.float64))
    return rgbe[..., :3].astype(np.float64) * scale[..., None]


def _rle_encode_component(data: bytes) -> bytes:
    out = bytearray()
    i = 0
    n = len(data)
    while i < n:
        # find a run of >= 4 identical bytes
        run_start = i
        while run_start < n:
            run_len = 1
            while (
                run_start + run_len < n
                and run_len < 127
                and data[run_start + run_len] == data[run_start]
            ):
                run_len += 1
            if run_len >= 4:
                break
            run_start += 1
            if run_start - i >= 128:
                break
        else:
            run_start = n
        lit = data[i:min(run_start, i + 128)]
        if lit:
            out.append(len(lit))
            out += lit
            i += len(lit)
            continue
        out.append(128 + run_len)
        out.append(data[run_start])
        i = run_start + run_len
    return bytes(out)


def save_hdr(pano: np.ndarray, path: str | os.PathLike) -> None:
    """Write an H x W x 3 nonnegative radiance grid as RLE-compressed RGBE."""
    pano = np.asarray(pano, dtype=np.float64)
    if pano.ndim != 3 or pano.shape[2] != 3:
        raise ValueError(f"expected H x W x 3 array, got {pano.shape}")
    if not np.all(np.isfinite(pano)) or np.any(pano < 0):
        raise ValueError("radiance values must be finite and nonnegative")
    h, w = pano.shape[:2]
    if not (8 <= w <= 32767):
        raise ValueError("RLE scanlines require 8 <= W <= 32767")
    rgbe = _float_to_rgbe(pano)
    with open(path, "wb") as fh:
        fh.write(b"#?RADIANCE\n")
        fh.write(b"FORMAT=32-bit_rle_rgbe\n\n")
        fh.write(f"-Y {h} +X {w}\n".encode("ascii"))
        for row in rgbe:
            fh.write(bytes([2, 2, (w >> 8) & 0xFF, w & 0xFF]))
            for comp in range(4):
                fh.write(_rle_encode_component(row[:, comp].tobytes()))


def _read_header(fh) -> tuple[int, int]:
    first = fh.readline().rstrip(b"\r\n")
    if not any(first.startswith(m) for m in _HEADER_MAGIC):
        raise HdrFormatError("malformed-header", "missing #?RADIANCE magic")
    fmt = None
    while True:
        line = fh.readline()
        if line == b"":
            raise HdrFormatError("malformed-header", "unterminated header")
        line = line.rstrip(b"\r\n")
        if line == b"":
            break
        if line.startswith(b"FORMAT="):
            fmt = line[len(b"FORMAT="):]
    if fmt is None:
        raise HdrFormatError("malformed-header", "missing FORMAT line")
    if fmt != b"32-bit_rle_rgbe":
        raise HdrFormatError(
            "unsupported-variant", f"unsupported FORMAT {fmt!r}"
        )
    res = fh.readline().rstrip(b"\r\n").split()
    if len(res) != 4 or res[0] != b"-Y" or res[2] != b"+X":
        raise HdrFormatError(
            "unsupported-variant",
            f"only '-Y H +X W' orientation is supported, got {res!r}",
        )
    try:
        h, w = int(res[1]), int(res[3])
    except ValueError:
        raise HdrFormatError("malformed-header", "non-numeric resolution line")
    if h < 1 or w < 1:
        raise HdrFormatError("malformed-header", "non-positive resolution")
    return h, w


def _decode_rle_row(buf: bytes, pos: int, w: int) -> tuple[np.ndarray, int]:
    row = np.empty((w, 4), dtype=np.uint8)
    for comp in range(4):
        filled = 0
        while filled < w:
            if pos >= len(buf):
                raise HdrFormatError("truncated-scanline", "ran out of data")
            code = buf[pos]
            pos += 1
            if code > 128:
                count = code - 128
                if pos >= len(buf):
                    raise HdrFormatError("truncated-scanline", "ran out of data")
                if filled + count > w:
                    raise HdrFormatError("truncated-scanline", "run overflow")
                row[filled:filled + count, comp] = buf[pos]
                pos += 1
            else:
                count = code
                if count == 0 or filled + count > w:
                    raise HdrFormatError("truncated-scanline", "bad literal count")
                if pos + count > len(buf):
                    raise HdrFormatError("truncated-scanline", "ran out of data")
                row[filled:filled + count, comp] = np.frombuffer(
                    buf, dtype=np.uint8, count=count, offset=pos
                )
                pos += count
            filled += count
    return row, pos


def load_hdr(path: str | os.PathLike) -> np.ndarray:
    """Read a Radiance .hdr file into an H x W x 3 float64 radiance grid."""
    with open(path, "rb") as fh:
        h, w = _read_header(fh)
        buf = fh.read()
    rgbe = np.empty((h, w, 4), dtype=np.uint8)
    pos = 0
    for r in range(h):
        if pos + 4 > len(buf):
            raise HdrFormatError("truncated-scanline", f"row {r}: missing data")
        b0, b1, b2, b3 = buf[pos:pos + 4]
        if b0 == 2 and b1 == 2 and (b2 << 8 | b3) == w:
            # new-style RLE scanline
            if w < 8 or w > 32767:
                raise HdrFormatError("truncated-scanline", "bad RLE width")
            pos += 4
            rgbe[r], pos = _decode_rle_row(buf, pos, w)
        elif b0 == 1 and b1 == 1 and b2 == 1:
            raise HdrFormatError(
                "unsupported-variant", "old-style RLE scanlines are not supported"
            )
        else:
            # flat scanline
            need = 4 * w
            if pos + need > len(buf):
                raise HdrFormatError("truncated-scanline", f"row {r}: short read")
            rgbe[r] = np.frombuffer(
                buf, dtype=np.uint8, count=need, offset=pos
            ).reshape(w, 4)
            pos += need
    return _rgbe_to_float(rgbe)
