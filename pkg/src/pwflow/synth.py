"""Deterministic textured test sequences with analytically known warps.

A textured disc and its textured background both contract radially about the
disc centre by the same per-frame factor while rotating in region-dependent
directions.  Because the two regions share the radial scaling map, the
normal (radial) velocity is continuous across the disc boundary by
construction; the angular components jump.  Every frame is rendered by
pulling frame 0 back through the accumulated closed-form map, so the ground
truth stays exact and interpolation blur does not compound.
"""

import math
from dataclasses import dataclass

import numpy as np

from .grid import RegionPartition, bilinear_sample, identity_map

__all__ = ["SynthSpec", "generate", "gt_backward_map", "texture"]


@dataclass(frozen=True)
class SynthSpec:
    """Geometry, motion, and texture parameters for a synthetic sequence."""

    size: tuple = (128, 128)
    disc_center: tuple = (64.0, 64.0)
    disc_radius: float = 30.0
    contraction_per_frame: float = 0.97
    rotation_inside_deg: float = 3.0
    rotation_outside_deg: float = -3.0
    frames: int = 10
    texture_seed: int = 0
    texture_smoothing: float = 2.0

    def __post_init__(self):
        w, h = self.size
        if w < 8 or h < 8:
            raise ValueError("grid too small")
        if not 0.0 < self.contraction_per_frame <= 1.0:
            raise ValueError("contraction_per_frame must lie in (0, 1]")
        if self.frames < 1:
            raise ValueError("need at least one frame")
        if self.texture_smoothing < 0:
            raise ValueError("texture_smoothing must be non-negative")
        if self.disc_radius <= 1.0:
            raise ValueError("disc radius too small")
        cx, cy = self.disc_center
        # contraction <= 1, so the frame-0 disc is the largest
        margin = min(cx - self.disc_radius, cy - self.disc_radius,
                     (w - 1) - cx - self.disc_radius, (h - 1) - cy - self.disc_radius)
        if margin < 4.0:
            raise ValueError("disc must keep a 4 pixel margin from the border")

    def radius_at(self, t: int) -> float:
        return self.disc_radius * self.contraction_per_frame**t


def texture(seed: int, size, smoothing: float) -> np.ndarray:
    """Seeded uniform noise, box-blurred and rescaled to [0, 1]."""
    w, h = size
    if smoothing < 0:
        raise ValueError("smoothing must be non-negative")
    rng = np.random.default_rng(seed)
    img = rng.random((h, w))
    half = int(round(smoothing))
    if half > 0:
        kernel = np.ones(2 * half + 1) / (2 * half + 1)
        pad = np.pad(img, ((half, half), (0, 0)), mode="reflect")
        img = np.apply_along_axis(
            lambda col: np.convolve(col, kernel, mode="valid"), 0, pad
        )
        pad = np.pad(img, ((0, 0), (half, half)), mode="reflect")
        img = np.apply_along_axis(
            lambda row: np.convolve(row, kernel, mode="valid"), 1, pad
        )
    lo, hi = img.min(), img.max()
    if hi > lo:
        img = (img - lo) / (hi - lo)
    return img


def _rotation(deg: float) -> np.ndarray:
    rad = math.radians(deg)
    c, s = math.cos(rad), math.sin(rad)
    return np.array([[c, -s], [s, c]])


def _radii(spec: SynthSpec, coords: np.ndarray) -> np.ndarray:
    rel = coords - np.asarray(spec.disc_center)
    return np.sqrt((rel**2).sum(axis=-1))


def _apply_map(coords, center, rot: np.ndarray, scale: float) -> np.ndarray:
    rel = coords - np.asarray(center)
    return (scale * rel) @ rot.T + np.asarray(center)


def generate(spec: SynthSpec):
    """Render the sequence and its exact ground truth.

    Returns ``(frames, gt_flows, gt_regions)``: the textured frames, the
    per-pixel displacement from frame t to frame t+1 (one field per
    transition), and the analytically scaled disc mask per frame.

    The textured first frame lives on an enlarged base canvas so that the
    whole-image contraction can keep pulling real texture in from beyond the
    visible border instead of smearing clamped edge values.
    """
    w, h = spec.size
    coords = identity_map(h, w)
    radii = _radii(spec, coords)

    s = spec.contraction_per_frame
    cx, cy = spec.disc_center
    corner_dist = max(
        math.hypot(cx - px, cy - py)
        for px in (0.0, w - 1.0)
        for py in (0.0, h - 1.0)
    )
    # sources live within this radius of the centre; pad the base canvas so
    # the whole reachable set stays inside it
    reach = s ** -(spec.frames - 1) * corner_dist
    border = min(cx, cy, (w - 1.0) - cx, (h - 1.0) - cy)
    pad = int(math.ceil(max(0.0, reach - border))) + 2
    base_size = (w + 2 * pad, h + 2 * pad)
    base_center = np.array([cx + pad, cy + pad])
    base_coords = identity_map(h + 2 * pad, w + 2 * pad)
    base_radii = np.sqrt(((base_coords - base_center) ** 2).sum(axis=-1))

    tex_in = texture(spec.texture_seed, base_size, spec.texture_smoothing)
    tex_out = texture(spec.texture_seed + 1, base_size, spec.texture_smoothing)
    base0 = np.where(base_radii <= spec.disc_radius, tex_in, tex_out)
    offset = np.array([float(pad), float(pad)])

    frames = [base0[pad : pad + h, pad : pad + w].copy()]
    regions = [RegionPartition((radii <= spec.disc_radius).astype(np.int32))]
    for t in range(1, spec.frames):
        inside_t = radii <= spec.radius_at(t)
        src_in = _apply_map(
            coords, spec.disc_center,
            _rotation(-t * spec.rotation_inside_deg), s**-t,
        )
        src_out = _apply_map(
            coords, spec.disc_center,
            _rotation(-t * spec.rotation_outside_deg), s**-t,
        )
        src = np.where(inside_t[..., None], src_in, src_out) + offset
        if (
            src.min() < 0.0
            or src[..., 0].max() > base_size[0] - 1
            or src[..., 1].max() > base_size[1] - 1
        ):
            raise ValueError(f"source coordinates leave the base canvas at frame {t}")
        frames.append(bilinear_sample(base0, src))
        regions.append(RegionPartition(inside_t.astype(np.int32)))

    # the per-transition map is stationary: only the region boundary moves
    dst_in = _apply_map(
        coords, spec.disc_center, _rotation(spec.rotation_inside_deg), s
    )
    dst_out = _apply_map(
        coords, spec.disc_center, _rotation(spec.rotation_outside_deg), s
    )
    gt_flows = []
    for t in range(spec.frames - 1):
        inside_t = radii <= spec.radius_at(t)
        dst = np.where(inside_t[..., None], dst_in, dst_out)
        gt_flows.append(dst - coords)

    return frames, gt_flows, regions


def gt_backward_map(spec: SynthSpec, transition: int) -> np.ndarray:
    """Exact source coordinates in frame t for each pixel of frame t+1."""
    if not 0 <= transition < spec.frames - 1:
        raise ValueError("transition index out of range")
    w, h = spec.size
    coords = identity_map(h, w)
    radii = _radii(spec, coords)
    inside_next = radii <= spec.radius_at(transition + 1)
    inv = 1.0 / spec.contraction_per_frame
    src_in = _apply_map(
        coords, spec.disc_center, _rotation(-spec.rotation_inside_deg), inv
    )
    src_out = _apply_map(
        coords, spec.disc_center, _rotation(-spec.rotation_outside_deg), inv
    )
    return np.where(inside_next[..., None], src_in, src_out)
