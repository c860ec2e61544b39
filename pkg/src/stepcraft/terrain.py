"""Procedural block terrain (infill + height variation) and trot footstep
target sequences.

The terrain is a square grid of cells; each cell is either solid with a
height or a hole. Queries outside the grid are treated as holes. A disc
around the origin is forced solid so the robot always spawns on ground.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tg import pair_for_index

# nominal stance: foot xy offsets from the base center, (4, 2)
STANCE_OFFSETS = np.array([
    [0.21, 0.13],    # front-left
    [0.21, -0.13],   # front-right
    [-0.21, 0.13],   # rear-left
    [-0.21, -0.13],  # rear-right
])

SCAN_SENTINEL = -1.0


class TargetGenerationError(RuntimeError):
    """A footstep target could not be placed on solid ground."""


@dataclass
class Terrain:
    cell_size: float
    heights: np.ndarray   # (rows, cols) float64; undefined where hole
    holes: np.ndarray     # (rows, cols) bool
    origin: np.ndarray    # world xy of the low corner of cell (0, 0)

    @property
    def rows(self) -> int:
        return self.heights.shape[0]

    @property
    def cols(self) -> int:
        return self.heights.shape[1]

    def cell_index(self, x: float, y: float):
        """Containing cell (row, col), or None when out of bounds.

        A query exactly on a shared cell edge belongs to the lower-index
        cell.
        """
        tx = (x - self.origin[0]) / self.cell_size
        ty = (y - self.origin[1]) / self.cell_size
        col = math.floor(tx)
        row = math.floor(ty)
        if tx == col and col > 0:
            col -= 1
        if ty == row and row > 0:
            row -= 1
        if 0 <= row < self.rows and 0 <= col < self.cols:
            return row, col
        return None

    def is_hole(self, x: float, y: float) -> bool:
        idx = self.cell_index(x, y)
        return True if idx is None else bool(self.holes[idx])

    def height_at(self, x: float, y: float):
        """Terrain height at the containing cell, or None for holes and
        out-of-bounds queries."""
        idx = self.cell_index(x, y)
        if idx is None or self.holes[idx]:
            return None
        return float(self.heights[idx])

    def sample_batch(self, points: np.ndarray):
        """Vectorized lookup for (n, 2) points: (heights, hole_mask).

        Heights are 0.0 wherever the mask flags a hole or out-of-bounds
        point; the same edge tie-break as cell_index applies."""
        points = np.asarray(points, float)
        t = (points - self.origin) / self.cell_size
        idx = np.floor(t).astype(np.int64)
        on_edge = (t == idx) & (idx > 0)
        idx[on_edge] -= 1
        col, row = idx[:, 0], idx[:, 1]
        inside = (0 <= row) & (row < self.rows) & (0 <= col) & (col < self.cols)
        rs = np.where(inside, row, 0)
        cs = np.where(inside, col, 0)
        holes = ~inside | self.holes[rs, cs]
        heights = np.where(holes, 0.0, self.heights[rs, cs])
        return heights, holes

    def solid_fraction(self) -> float:
        return 1.0 - float(self.holes.mean())


def generate_terrain(infill: float, height_variation: float, extent: float,
                     seed, cell_size: float = 0.25,
                     spawn_radius: float = 0.6) -> Terrain:
    """Square terrain of side `extent`, centered on the origin.

    Each cell is a hole with probability 1 - infill; solid cells get a
    height drawn uniformly from [-hv/2, +hv/2]. Cells whose center lies
    within spawn_radius of the origin are forced solid.
    """
    if not 0.0 < infill <= 1.0:
        raise ValueError(f"infill must be in (0, 1], got {infill}")
    if height_variation < 0.0:
        raise ValueError(f"height_variation must be >= 0, got {height_variation}")
    if extent <= 0.0:
        raise ValueError(f"extent must be positive, got {extent}")
    n = max(1, math.ceil(extent / cell_size))
    rng = np.random.default_rng(seed)
    holes = rng.random((n, n)) > infill
    heights = rng.uniform(-0.5 * height_variation, 0.5 * height_variation, (n, n))
    origin = np.array([-0.5 * n * cell_size, -0.5 * n * cell_size])
    centers = origin[0] + (np.arange(n) + 0.5) * cell_size
    cx, cy = np.meshgrid(centers, centers, indexing="xy")
    holes[cx ** 2 + cy ** 2 <= spawn_radius ** 2] = False
    return Terrain(cell_size, heights, holes, origin)


# ---------------------------------------------------------------------------
# Footstep target sequences


@dataclass
class FootTarget:
    foot: int
    xy: np.ndarray   # world (2,)
    z: float
    hit: bool = False


@dataclass
class TargetSequence:
    """Ordered pairs of footstep targets for a trot.

    Even pair indices belong to (front-left, rear-right), odd indices to
    (front-right, rear-left). The active index only ever advances.
    """

    pairs: list = field(default_factory=list)
    active_index: int = 0

    def exhausted(self) -> bool:
        return self.active_index >= len(self.pairs)

    def active_pair(self):
        return None if self.exhausted() else self.pairs[self.active_index]

    def active_feet(self):
        return pair_for_index(self.active_index)

    def advance(self) -> None:
        if self.exhausted():
            raise IndexError("no active pair to advance past")
        self.active_index += 1

    def set_pair(self, index: int, targets) -> None:
        """Replace pair `index`, or append when index == len(pairs)."""
        targets = list(targets)
        expected = set(pair_for_index(index))
        if {t.foot for t in targets} != expected:
            raise ValueError(f"pair {index} must cover feet {sorted(expected)}")
        if index == len(self.pairs):
            self.pairs.append(targets)
        elif 0 <= index < len(self.pairs):
            self.pairs[index] = targets
        else:
            raise IndexError(f"pair index {index} out of range")


def generate_target_sequence(terrain: Terrain, start_xy, n_pairs: int, seed,
                             step_length_range=(0.0, 0.2), jitter: float = 0.1,
                             max_retries: int = 20) -> TargetSequence:
    """Trot sequence marching along a random heading with a random stride.

    The stride is drawn from U(step_length_range) once per sequence, the
    heading from U(0, 2*pi). Every target is independently jittered by
    U(-jitter, jitter) in x and y and re-jittered (up to max_retries) until
    it lands on a solid cell.
    """
    rng = np.random.default_rng(seed)
    start_xy = np.asarray(start_xy, float)
    step_length = rng.uniform(*step_length_range)
    heading = rng.uniform(0.0, 2.0 * math.pi)
    direction = np.array([math.cos(heading), math.sin(heading)])

    seq = TargetSequence()
    for index in range(n_pairs):
        feet = pair_for_index(index)
        # diagonal pairs leapfrog: the second pair trails by half a stride
        steps_taken = index // 2 + 1
        progress = step_length * (steps_taken - (0.5 if index % 2 else 0.0))
        targets = []
        for foot in feet:
            nominal = start_xy + STANCE_OFFSETS[foot] + direction * progress
            for attempt in range(max_retries + 1):
                xy = nominal + rng.uniform(-jitter, jitter, 2)
                z = terrain.height_at(xy[0], xy[1])
                if z is not None:
                    break
            else:
                raise TargetGenerationError(
                    f"could not place a solid target for pair {index} (foot {foot})"
                )
            targets.append(FootTarget(foot, xy, z))
        seq.set_pair(index, targets)
    return seq


# ---------------------------------------------------------------------------
# Terrain scans around the feet


def scan_around_feet(terrain: Terrain, foot_xy: np.ndarray, k: int = 3,
                     spacing: float = 0.05) -> np.ndarray:
    """k x k height scan centered on each foot, (4, k*k).

    Heights are relative to the terrain height under the foot's own cell
    (0 when that cell is a hole); holes and out-of-bounds points report the
    sentinel depth -1.0. Scan rows run along y, columns along x.
    """
    foot_xy = np.asarray(foot_xy, float)
    offsets = (np.arange(k) - (k - 1) / 2.0) * spacing
    dx, dy = np.meshgrid(offsets, offsets, indexing="xy")
    grid = np.stack([dx.ravel(), dy.ravel()], axis=1)          # (k*k, 2)
    points = (foot_xy[:, None, :] + grid[None, :, :]).reshape(-1, 2)
    heights, holes = terrain.sample_batch(points)
    ref_h, ref_holes = terrain.sample_batch(foot_xy)
    ref = np.where(ref_holes, 0.0, ref_h)
    rel = heights.reshape(4, k * k) - ref[:, None]
    rel[holes.reshape(4, k * k)] = SCAN_SENTINEL
    return rel


# ---------------------------------------------------------------------------
# Heightfield file format
#
# Plain text: one header line "cols rows cell_size", then row-major entries
# separated by whitespace; holes are written as "H", heights in meters with
# four decimals. The grid is assumed centered on the origin.


def save_heightfield(terrain: Terrain, path) -> None:
    lines = [f"{terrain.cols} {terrain.rows} {terrain.cell_size:.4f}"]
    for r in range(terrain.rows):
        cells = [
            "H" if terrain.holes[r, c] else f"{terrain.heights[r, c]:.4f}"
            for c in range(terrain.cols)
        ]
        lines.append(" ".join(cells))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_heightfield(path) -> Terrain:
    with open(path) as fh:
        header = fh.readline().split()
        cols, rows, cell_size = int(header[0]), int(header[1]), float(header[2])
        heights = np.zeros((rows, cols))
        holes = np.zeros((rows, cols), dtype=bool)
        for r in range(rows):
            cells = fh.readline().split()
            if len(cells) != cols:
                raise ValueError(f"row {r}: expected {cols} entries, got {len(cells)}")
            for c, token in enumerate(cells):
                if token == "H":
                    holes[r, c] = True
                else:
                    heights[r, c] = float(token)
    origin = np.array([-0.5 * cols * cell_size, -0.5 * rows * cell_size])
    return Terrain(cell_size, heights, holes, origin)
