"""Hexagonal-cell tactile and proximity skin on the chest, forearms and hands."""
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src.sim.scene import SceneConfig, WorldState, arm_chains, waist_position

logger = logging.getLogger(__name__)

# (patch name, arm index or None for chest, link index along the arm chain, columns)
DEFAULT_PATCHES = (
    ("chest", None, None, 4),
    ("left_forearm", 0, 1, 5),
    ("left_wrist", 0, 2, 3),
    ("right_forearm", 1, 1, 5),
    ("right_wrist", 1, 2, 3),
)


@dataclass(frozen=True)
class TactileCell:
    patch: str
    arm: Optional[int]
    link: Optional[int]
    fraction: float
    side: float


@dataclass(frozen=True)
class TactileLayout:
    """Cells in fixed order, two hexagonally offset rows per patch."""

    cells: Tuple[TactileCell, ...]
    edges: Tuple[Tuple[int, int], ...]

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def patches(self) -> List[str]:
        return [cell.patch for cell in self.cells]

    def adjacency(self) -> np.ndarray:
        A = np.zeros((self.n_cells, self.n_cells))
        for i, j in self.edges:
            A[i, j] = A[j, i] = 1.0
        return A

    def side_mask(self, arm: int) -> np.ndarray:
        return np.array([cell.arm == arm for cell in self.cells])


@dataclass(frozen=True)
class TactileFrame:
    touch: np.ndarray
    proximity: np.ndarray

    def __post_init__(self):
        touch = np.asarray(self.touch, dtype=float)
        proximity = np.asarray(self.proximity, dtype=float)
        if touch.shape != proximity.shape:
            raise ValueError("touch and proximity must have the same length")
        object.__setattr__(self, "touch", touch)
        object.__setattr__(self, "proximity", proximity)

    def flatten(self) -> np.ndarray:
        """All touch intensities followed by all proximity intensities."""
        return np.concatenate([self.touch, self.proximity])

    def per_cell(self) -> np.ndarray:
        """(N, 2) features: touch and proximity per cell."""
        return np.column_stack([self.touch, self.proximity])

    @classmethod
    def zeros(cls, n_cells: int) -> "TactileFrame":
        return cls(np.zeros(n_cells), np.zeros(n_cells))


def build_layout(patches: Sequence[Tuple[str, Optional[int], Optional[int], int]] = DEFAULT_PATCHES) -> TactileLayout:
    """Two-row strips per patch with hexagonal neighbours inside each patch."""
    cells: List[TactileCell] = []
    edges: List[Tuple[int, int]] = []
    for name, arm, link, columns in patches:
        base = len(cells)
        for row, (offset, side) in enumerate(((0.25, 1.0), (0.75, -1.0))):
            for k in range(columns):
                cells.append(TactileCell(name, arm, link, (k + offset) / columns, side))
        for k in range(columns):
            top, bottom = base + k, base + columns + k
            if k + 1 < columns:
                edges.append((top, top + 1))
                edges.append((bottom, bottom + 1))
                edges.append((bottom, top + 1))
            edges.append((top, bottom))
    return TactileLayout(cells=tuple(cells), edges=tuple(edges))


def cell_geometry(world: WorldState, layout: TactileLayout, scene: SceneConfig) -> Tuple[np.ndarray, np.ndarray]:
    """World anchor points and outward unit normals of every cell."""
    chains = arm_chains(world, scene)
    waist = waist_position(world, scene)
    r = scene.capsule_radius
    anchors = np.zeros((layout.n_cells, 2))
    normals = np.zeros((layout.n_cells, 2))
    for i, cell in enumerate(layout.cells):
        if cell.arm is None:
            x = waist[0] + (2.0 * cell.fraction - 1.0) * scene.chest_half_width
            anchors[i] = (x, waist[1])
            normals[i] = (0.0, -1.0)
            continue
        a, b = chains[cell.arm, cell.link], chains[cell.arm, cell.link + 1]
        d = (b - a) / np.linalg.norm(b - a)
        perp = np.array([-d[1], d[0]]) * cell.side
        anchors[i] = a + cell.fraction * (b - a) + r * perp
        normals[i] = perp
    return anchors, normals


def _ray_box(world: WorldState, anchors: np.ndarray, normals: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Distance along each normal to the box and penetration depth of anchors inside it."""
    box = world.box
    half = np.array([0.5 * box.width, 0.5 * box.height])
    origin = box.to_local(anchors)
    direction = normals @ box.rotation()

    inside = np.all(np.abs(origin) <= half, axis=1)
    depth = np.where(inside, np.min(half - np.abs(origin), axis=1), 0.0)

    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (-half - origin) / direction
        t2 = (half - origin) / direction
    t_near = np.nanmax(np.where(direction == 0, -np.inf, np.minimum(t1, t2)), axis=1)
    t_far = np.nanmin(np.where(direction == 0, np.inf, np.maximum(t1, t2)), axis=1)
    parallel_miss = np.any((direction == 0) & (np.abs(origin) > half), axis=1)
    hit = (t_near <= t_far) & (t_far >= 0) & ~parallel_miss
    distance = np.where(inside, 0.0, np.where(hit & (t_near >= 0), t_near, np.inf))
    return distance, depth


def _ray_table(anchors: np.ndarray, normals: np.ndarray, scene: SceneConfig) -> Tuple[np.ndarray, np.ndarray]:
    hw = scene.table_half_width
    if hw <= 0:
        n = len(anchors)
        return np.full(n, np.inf), np.zeros(n)
    below = anchors[:, 1] < scene.table_top
    over = np.abs(anchors[:, 0]) <= hw
    inside = below & over
    depth = np.where(inside, scene.table_top - anchors[:, 1], 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (scene.table_top - anchors[:, 1]) / normals[:, 1]
    x_hit = anchors[:, 0] + t * normals[:, 0]
    hit = (normals[:, 1] < 0) & (t >= 0) & (np.abs(x_hit) <= hw) & ~below
    distance = np.where(inside, 0.0, np.where(hit, t, np.inf))
    return distance, depth


def touch_intensity(penetration: np.ndarray, gain: float) -> np.ndarray:
    return np.clip(gain * np.asarray(penetration, dtype=float), 0.0, 1.0)


def proximity_intensity(distance: np.ndarray, length: float, max_range: float) -> np.ndarray:
    d = np.asarray(distance, dtype=float)
    with np.errstate(over="ignore"):
        return np.where(d <= max_range, np.exp(-np.minimum(d, max_range) / length), 0.0)


def tactile_read(world: WorldState, layout: TactileLayout, scene: SceneConfig) -> TactileFrame:
    """Touch and proximity of every cell against the box and the table."""
    anchors, normals = cell_geometry(world, layout, scene)
    distance, depth = _ray_table(anchors, normals, scene)
    if world.box is not None:
        box_distance, box_depth = _ray_box(world, anchors, normals)
        distance = np.minimum(distance, box_distance)
        depth = np.maximum(depth, box_depth)

    touch = touch_intensity(depth, scene.touch_gain)
    if scene.proximity_enabled:
        proximity = proximity_intensity(distance, scene.proximity_length, scene.proximity_range)
    else:
        proximity = np.zeros(layout.n_cells)
    return TactileFrame(touch=touch, proximity=proximity)
