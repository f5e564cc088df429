"""Flat-shaded head-camera rasterizer."""
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from src.sim.scene import SceneConfig, WorldState, arm_chains

# World window seen by the head camera: x range, then z range.
VIEW_X = (-0.6, 0.6)
VIEW_Z = (0.55, 1.45)

BACKGROUND = (40, 44, 52)
TABLE_COLOR = (120, 90, 60)
ARM_COLOR = (180, 180, 190)
CHECKER_CELL = 0.04


@dataclass(frozen=True)
class CameraImage:
    """Row-major RGB bytes, row 0 at the top of the view."""

    width: int
    height: int
    data: bytes

    def __post_init__(self):
        if len(self.data) != 3 * self.width * self.height:
            raise ValueError(f"image payload has {len(self.data)} bytes, expected {3 * self.width * self.height}")

    def as_array(self) -> np.ndarray:
        return np.frombuffer(self.data, dtype=np.uint8).reshape(self.height, self.width, 3)

    @classmethod
    def from_array(cls, pixels: np.ndarray) -> "CameraImage":
        pixels = np.ascontiguousarray(pixels, dtype=np.uint8)
        return cls(width=pixels.shape[1], height=pixels.shape[0], data=pixels.tobytes())


def _pixel_centers(width: int, height: int) -> Tuple[np.ndarray, np.ndarray]:
    xs = VIEW_X[0] + (np.arange(width) + 0.5) * (VIEW_X[1] - VIEW_X[0]) / width
    zs = VIEW_Z[1] - (np.arange(height) + 0.5) * (VIEW_Z[1] - VIEW_Z[0]) / height
    return np.meshgrid(xs, zs)


def _segment_distance(px: np.ndarray, pz: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    t = np.clip(((px - a[0]) * ab[0] + (pz - a[1]) * ab[1]) / float(ab @ ab), 0.0, 1.0)
    return np.hypot(px - (a[0] + t * ab[0]), pz - (a[1] + t * ab[1]))


def render(world: WorldState, scene: SceneConfig, width: Optional[int] = None,
           height: Optional[int] = None) -> CameraImage:
    width = width or scene.image_width
    height = height or scene.image_height
    px, pz = _pixel_centers(width, height)
    image = np.empty((height, width, 3), dtype=np.uint8)
    image[:] = BACKGROUND

    if scene.table_half_width > 0:
        image[(pz <= scene.table_top) & (np.abs(px) <= scene.table_half_width)] = TABLE_COLOR

    box = world.box
    if box is not None:
        points = np.stack([px.ravel(), pz.ravel()], axis=1)
        local = box.to_local(points).reshape(height, width, 2)
        inside = (np.abs(local[..., 0]) <= 0.5 * box.width) & (np.abs(local[..., 1]) <= 0.5 * box.height)
        color = np.array(scene.box_color, dtype=np.uint8)
        if scene.box_texture == "checker":
            cells = np.floor(local[..., 0] / CHECKER_CELL) + np.floor(local[..., 1] / CHECKER_CELL)
            dark = (cells.astype(int) % 2) == 1
            image[inside & ~dark] = color
            image[inside & dark] = color // 2
        else:
            image[inside] = color

    for chain in arm_chains(world, scene):
        for a, b in zip(chain[:-1], chain[1:]):
            image[_segment_distance(px, pz, a, b) <= scene.capsule_radius] = ARM_COLOR

    return CameraImage.from_array(image)
