"""Digital topology on binary rasters: simple points, components, holes.

Foreground uses 8-connectivity and background 4-connectivity, the standard
complementary pair for 2D digital images.  A pixel is *simple* when flipping
it between foreground and background cannot change the topology of either;
the criterion depends only on the 8-neighbourhood ring, so all 256 ring
configurations are precomputed into a lookup table.
"""

import numpy as np

__all__ = [
    "count_components",
    "count_holes",
    "euler_characteristic",
    "is_simple_point",
    "label_components",
]

# Ring offsets around a pixel, indexed by LUT bit position.
_RING = (
    (-1, -1), (-1, 0), (-1, 1),
    (0, -1), (0, 1),
    (1, -1), (1, 0), (1, 1),
)
_EDGE_BITS = tuple(i for i, (dy, dx) in enumerate(_RING) if abs(dy) + abs(dx) == 1)


def _ring_components(members: list, connect8: bool) -> list:
    """Connected components among ring cells (positions as (dy, dx))."""
    remaining = set(members)
    comps = []
    while remaining:
        seed = remaining.pop()
        comp = {seed}
        stack = [seed]
        while stack:
            cy, cx = stack.pop()
            for oy, ox in list(remaining):
                dy, dx = abs(cy - oy), abs(cx - ox)
                adjacent = max(dy, dx) == 1 if connect8 else dy + dx == 1
                if adjacent:
                    remaining.remove((oy, ox))
                    comp.add((oy, ox))
                    stack.append((oy, ox))
        comps.append(comp)
    return comps


def _build_simple_lut() -> np.ndarray:
    lut = np.zeros(256, dtype=bool)
    for cfg in range(256):
        fg = [_RING[i] for i in range(8) if cfg >> i & 1]
        bg = [_RING[i] for i in range(8) if not cfg >> i & 1]
        # Every ring cell is 8-adjacent to the centre, so the foreground
        # count is just the number of 8-components in the ring.
        t_fg = len(_ring_components(fg, connect8=True))
        # Background components must touch a 4-neighbour of the centre.
        edge_cells = {_RING[i] for i in _EDGE_BITS}
        t_bg = sum(
            1
            for comp in _ring_components(bg, connect8=False)
            if comp & edge_cells
        )
        lut[cfg] = t_fg == 1 and t_bg == 1
    return lut


_SIMPLE_LUT = _build_simple_lut()


def _ring_config(fg: np.ndarray, y: int, x: int) -> int:
    h, w = fg.shape
    cfg = 0
    for i, (dy, dx) in enumerate(_RING):
        yy, xx = y + dy, x + dx
        if 0 <= yy < h and 0 <= xx < w and fg[yy, xx]:
            cfg |= 1 << i
    return cfg


def is_simple_point(fg: np.ndarray, y: int, x: int) -> bool:
    """Whether flipping pixel (y, x) preserves digital topology.

    Pixels outside the raster count as background.  The test is symmetric:
    the same criterion covers adding the pixel to the foreground and
    removing it.
    """
    return bool(_SIMPLE_LUT[_ring_config(np.asarray(fg, dtype=bool), y, x)])


def label_components(mask, connectivity: int = 8) -> tuple:
    """Label connected components of a boolean mask.

    Returns ``(labels, count)`` where labels are 1-based and 0 marks
    background.  ``connectivity`` is 4 or 8.
    """
    mask = np.asarray(mask, dtype=bool)
    if connectivity == 8:
        offsets = _RING
    elif connectivity == 4:
        offsets = ((-1, 0), (0, -1), (0, 1), (1, 0))
    else:
        raise ValueError("connectivity must be 4 or 8")
    h, w = mask.shape
    labels = np.zeros((h, w), dtype=np.int32)
    count = 0
    for sy, sx in zip(*np.nonzero(mask)):
        if labels[sy, sx]:
            continue
        count += 1
        labels[sy, sx] = count
        stack = [(sy, sx)]
        while stack:
            cy, cx = stack.pop()
            for dy, dx in offsets:
                yy, xx = cy + dy, cx + dx
                if 0 <= yy < h and 0 <= xx < w and mask[yy, xx] and not labels[yy, xx]:
                    labels[yy, xx] = count
                    stack.append((yy, xx))
    return labels, count


def count_components(mask, connectivity: int = 8) -> int:
    """Number of connected components of a boolean mask."""
    return label_components(mask, connectivity)[1]


def count_holes(mask) -> int:
    """Number of background 4-components fully enclosed by the foreground."""
    mask = np.asarray(mask, dtype=bool)
    labels, count = label_components(~mask, connectivity=4)
    if count == 0:
        return 0
    border = np.concatenate(
        [labels[0, :], labels[-1, :], labels[:, 0], labels[:, -1]]
    )
    outside = set(int(v) for v in np.unique(border) if v > 0)
    return count - len(outside)


def euler_characteristic(mask) -> int:
    """Components minus holes, under the (8, 4) connectivity convention."""
    return count_components(mask, 8) - count_holes(mask)
