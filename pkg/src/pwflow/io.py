"""Raster file formats: binary PGM/PPM images and float32 grid files.

Float grids use a small self-describing format: three text header lines
(``FGRID``, ``width height``, ``channels``) followed by row-major
little-endian float32 samples, channel-interleaved per pixel.  Round trips
are bit-exact.
"""

import numpy as np

from .errors import InputFormatError

__all__ = [
    "flow_to_color",
    "normalize_sequence",
    "read_fgrid",
    "read_pgm",
    "write_fgrid",
    "write_pgm",
    "write_ppm",
]

FGRID_MAGIC = b"FGRID"


def _read_pnm_header(data: bytes, magic: bytes, path) -> tuple:
    if not data.startswith(magic):
        raise InputFormatError(f"{path}: expected {magic.decode()} raster")
    fields = []
    pos = len(magic)
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise InputFormatError(f"{path}: truncated header")
        fields.append(int(data[start:pos]))
    return fields[0], fields[1], fields[2], pos + 1


def read_pgm(path) -> np.ndarray:
    """Read a binary (P5) PGM as uint8 or uint16 of shape (H, W)."""
    with open(path, "rb") as fh:
        data = fh.read()
    width, height, maxval, offset = _read_pnm_header(data, b"P5", path)
    if maxval <= 0 or maxval > 65535:
        raise InputFormatError(f"{path}: unsupported maxval {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    count = width * height
    if len(data) - offset < count * dtype.itemsize:
        raise InputFormatError(f"{path}: truncated pixel data")
    raw = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
    out = raw.reshape(height, width)
    return out.astype(np.uint16) if maxval > 255 else out.copy()


def write_pgm(path, image, maxval: int | None = None) -> None:
    """Write integer data as binary PGM; 16-bit values are big-endian."""
    arr = np.asarray(image)
    if arr.ndim != 2:
        raise ValueError("PGM data must be 2D")
    if np.issubdtype(arr.dtype, np.floating):
        raise ValueError("write_pgm expects integer data; quantise first")
    if maxval is None:
        maxval = 255 if arr.max(initial=0) <= 255 else 65535
    if arr.min(initial=0) < 0 or arr.max(initial=0) > maxval:
        raise ValueError("pixel values out of range for the chosen maxval")
    h, w = arr.shape
    header = f"P5\n{w} {h}\n{maxval}\n".encode()
    payload = arr.astype(">u2" if maxval > 255 else np.uint8).tobytes()
    with open(path, "wb") as fh:
        fh.write(header + payload)


def quantize(image, maxval: int = 65535) -> np.ndarray:
    """Map a [0, 1] float image to integer levels for PGM output."""
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    return np.rint(arr * maxval).astype(np.uint16 if maxval > 255 else np.uint8)


def write_ppm(path, rgb) -> None:
    """Write uint8 RGB data of shape (H, W, 3) as binary PPM."""
    arr = np.asarray(rgb, dtype=np.uint8)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError("PPM data must have shape (H, W, 3)")
    h, w = arr.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode() + arr.tobytes())


def write_fgrid(path, field) -> None:
    """Write a float field of shape (H, W) or (H, W, C<=2) as FGRID."""
    arr = np.asarray(field, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[..., None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 2):
        raise ValueError("FGRID supports 1 or 2 channels")
    h, w, c = arr.shape
    header = f"FGRID\n{w} {h}\n{c}\n".encode()
    payload = arr.astype("<f4").tobytes(order="C")
    with open(path, "wb") as fh:
        fh.write(header + payload)


def read_fgrid(path) -> np.ndarray:
    """Read an FGRID file as float32 of shape (H, W) or (H, W, 2)."""
    with open(path, "rb") as fh:
        data = fh.read()
    lines = data.split(b"\n", 3)
    if len(lines) < 4 or lines[0] != FGRID_MAGIC:
        raise InputFormatError(f"{path}: not an FGRID file")
    try:
        w, h = (int(v) for v in lines[1].split())
        channels = int(lines[2])
    except ValueError as exc:
        raise InputFormatError(f"{path}: malformed FGRID header") from exc
    if channels not in (1, 2):
        raise InputFormatError(f"{path}: unsupported channel count {channels}")
    count = w * h * channels
    raw = np.frombuffer(lines[3], dtype="<f4", count=count)
    if raw.size != count:
        raise InputFormatError(f"{path}: truncated FGRID data")
    out = raw.reshape(h, w, channels)
    return out[..., 0].copy() if channels == 1 else out.copy()


def normalize_sequence(frames) -> list:
    """Affine-map a frame sequence to [0, 1] using the first frame's range.

    The same map applies to every frame so intensities stay comparable
    across the sequence.
    """
    frames = [np.asarray(f, dtype=np.float64) for f in frames]
    lo = float(frames[0].min())
    hi = float(frames[0].max())
    scale = 1.0 / (hi - lo) if hi > lo else 1.0
    return [(f - lo) * scale for f in frames]


def flow_to_color(flow, max_magnitude: float | None = None) -> np.ndarray:
    """Direction-as-hue, magnitude-as-saturation rendering of a flow field.

    ``max_magnitude`` fixes the saturation scale; when omitted the field's
    own maximum is used (1.0 for an all-zero field).
    """
    flow = np.asarray(flow, dtype=np.float64)
    mag = np.sqrt((flow**2).sum(axis=-1))
    if max_magnitude is None:
        max_magnitude = float(mag.max()) or 1.0
    if max_magnitude <= 0:
        raise ValueError("max_magnitude must be positive")
    sat = np.clip(mag / max_magnitude, 0.0, 1.0)
    hue = (np.arctan2(flow[..., 1], flow[..., 0]) / (2.0 * np.pi)) % 1.0

    # vectorised HSV -> RGB with V = 1
    k = (hue * 6.0).astype(np.int64) % 6
    f = hue * 6.0 - np.floor(hue * 6.0)
    p = 1.0 - sat
    q = 1.0 - sat * f
    t = 1.0 - sat * (1.0 - f)
    one = np.ones_like(sat)
    r = np.choose(k, [one, q, p, p, t, one])
    g = np.choose(k, [t, one, one, q, p, p])
    b = np.choose(k, [p, p, t, one, one, q])
    rgb = np.stack([r, g, b], axis=-1)
    return np.rint(rgb * 255.0).astype(np.uint8)
