"""Region layouts on the feature-map grid and per-region sequence extraction."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# row-major names for the canonical 3x3 layout
FACE_REGION_NAMES = (
    "left eye", "forehead", "right eye",
    "left cheek", "nose", "right cheek",
    "left mouth side", "mouth", "right mouth side",
)


@dataclass(frozen=True)
class RegionSpec:
    """Spatial windows on an ``H x W`` grid.

    ``windows[i]`` is ``((r0, r1), (c0, c1))`` with half-open bounds and
    ``centers[i]`` is ``(p, q)``: the window's row and column midpoints
    divided by ``H`` and ``W``.
    """

    height: int
    width: int
    windows: tuple[tuple[tuple[int, int], tuple[int, int]], ...]
    centers: tuple[tuple[float, float], ...]
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        if len(self.windows) < 2:
            raise ValueError("a region spec needs at least two regions")
        if len(self.centers) != len(self.windows):
            raise ValueError("one center per window is required")
        self.validate()

    @property
    def n_regions(self) -> int:
        return len(self.windows)

    def validate(self) -> None:
        for k, ((r0, r1), (c0, c1)) in enumerate(self.windows):
            if not (0 <= r0 < r1 <= self.height and 0 <= c0 < c1 <= self.width):
                raise ValueError(
                    f"region {k + 1} window rows {r0}..{r1} cols {c0}..{c1} "
                    f"exceeds {self.height}x{self.width} grid")
        for k, (p, q) in enumerate(self.centers):
            if not (0.0 <= p <= 1.0 and 0.0 <= q <= 1.0):
                raise ValueError(f"region {k + 1} center ({p}, {q}) lies outside [0, 1]^2")

    def region_width(self, channels: int) -> int:
        sizes = {(r1 - r0) * (c1 - c0) for (r0, r1), (c0, c1) in self.windows}
        if len(sizes) != 1:
            raise ValueError("regions have unequal areas")
        return sizes.pop() * channels

    def label(self, k: int) -> str:
        """Human-readable name of 0-based region ``k``."""
        if self.names is not None:
            return self.names[k]
        return f"region {k + 1}"

    def centers_array(self) -> np.ndarray:
        return np.asarray(self.centers, dtype=np.float64)


def grid_spec(height: int, width: int, rows: int, cols: int) -> RegionSpec:
    """Split the grid into ``rows x cols`` equal, non-overlapping windows."""
    if rows < 1 or cols < 1 or height % rows or width % cols:
        raise ValueError(f"{rows}x{cols} regions do not evenly divide a {height}x{width} grid")
    h, w = height // rows, width // cols
    windows, centers = [], []
    for r in range(rows):
        for c in range(cols):
            r0, c0 = r * h, c * w
            windows.append(((r0, r0 + h), (c0, c0 + w)))
            centers.append(((r0 + h / 2) / height, (c0 + w / 2) / width))
    names = FACE_REGION_NAMES if (rows, cols) == (3, 3) else None
    return RegionSpec(height, width, tuple(windows), tuple(centers), names)


def partition(frames: np.ndarray, spec: RegionSpec) -> list[np.ndarray]:
    """Crop each window from every frame and flatten it row-major.

    ``frames`` is ``[T, H, W, C]``; returns ``N`` arrays of ``[T, h*w*C]``.
    """
    if frames.ndim != 4:
        raise ValueError(f"expected [T, H, W, C] frames, got shape {frames.shape}")
    t, height, width, _ = frames.shape
    if t < 1:
        raise ValueError("sequence has no frames")
    if (height, width) != (spec.height, spec.width):
        raise ValueError(f"frames are {height}x{width} but regions were laid out on "
                         f"{spec.height}x{spec.width}")
    return [frames[:, r0:r1, c0:c1, :].reshape(t, -1) for (r0, r1), (c0, c1) in spec.windows]


def partition_batch(frames: np.ndarray, spec: RegionSpec) -> np.ndarray:
    """Batched :func:`partition`: ``[B, T, H, W, C]`` -> ``[B, N, T, F]``."""
    b, t = frames.shape[:2]
    if frames.shape[2:4] != (spec.height, spec.width):
        raise ValueError(f"frames are {frames.shape[2]}x{frames.shape[3]} but regions were laid "
                         f"out on {spec.height}x{spec.width}")
    crops = [frames[:, :, r0:r1, c0:c1, :].reshape(b, t, -1) for (r0, r1), (c0, c1) in spec.windows]
    return np.stack(crops, axis=1)


def enumerate_pairs(n_objects: int) -> list[tuple[int, int]]:
    """All unordered pairs ``(i, j)``, ``i < j``, in lexicographic order (0-based)."""
    if n_objects < 2:
        raise ValueError(f"need at least two objects to form pairs, got {n_objects}")
    return [(i, j) for i in range(n_objects) for j in range(i + 1, n_objects)]


def format_regions(indices, one_based: bool = True) -> str:
    """Comma-joined region indices as used in reports (1-based by default)."""
    off = 1 if one_based else 0
    return ",".join(str(int(k) + off) for k in indices)


def parse_regions(text: str) -> list[int]:
    """Inverse of :func:`format_regions`: ``"4,8"`` -> ``[3, 7]``."""
    text = text.strip()
    if not text:
        return []
    out = []
    for part in text.split(","):
        k = int(part)
        if k < 1:
            raise ValueError(f"region indices are 1-based, got {k}")
        out.append(k - 1)
    return out
