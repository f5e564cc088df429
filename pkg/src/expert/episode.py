"""Episode and dataset manifest files.

An episode file is JSON lines: a header record, then one record per 10 Hz
frame. Floats are written in their shortest round-trip form and images as
base64 row-major RGB bytes, so write -> read -> write is byte-identical.
"""
import base64
import hashlib
import json
import logging
from pathlib import Path
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, ValidationError

from src.utils.errors import EpisodeFormatError

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


class EpisodeHeader(BaseModel):
    task: str
    size: str
    position: float
    seed: int
    config_hash: str
    n_cells: int
    image_width: int
    image_height: int
    action_dim: int = 10
    q_dim: int = 6
    frame_period: int = 50
    control_dt: float = 0.002
    outcome: str = "Success"


class Frame(BaseModel):
    tick: int
    q: List[float]
    touch: List[float]
    proximity: List[float]
    image: str
    action: List[float]

    def pixels(self, width: int, height: int) -> np.ndarray:
        return np.frombuffer(base64.b64decode(self.image), dtype=np.uint8).reshape(height, width, 3)

    def tactile_vector(self) -> np.ndarray:
        return np.array(self.touch + self.proximity)

    @property
    def gripper(self) -> List[float]:
        return [self.action[4], self.action[9]]


class Episode(BaseModel):
    header: EpisodeHeader
    frames: List[Frame]

    @property
    def duration(self) -> float:
        return len(self.frames) * self.header.frame_period * self.header.control_dt

    def actions(self) -> np.ndarray:
        return np.array([f.action for f in self.frames])

    def joint_positions(self) -> np.ndarray:
        return np.array([f.q for f in self.frames])


def encode_image(pixels: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(pixels, dtype=np.uint8).tobytes()).decode("ascii")


def _line(model: BaseModel) -> str:
    return json.dumps(model.model_dump(mode="json"), separators=(",", ":"))


def episode_bytes(episode: Episode) -> bytes:
    lines = [_line(episode.header)] + [_line(frame) for frame in episode.frames]
    return ("\n".join(lines) + "\n").encode("utf-8")


def validate_episode(episode: Episode, expected_hash: Optional[str] = None) -> None:
    """Check rate, shapes, finiteness and the producing config hash.

    Raises:
        EpisodeFormatError: On any violation
    """
    h = episode.header
    if expected_hash is not None and h.config_hash != expected_hash:
        raise EpisodeFormatError(f"episode hash {h.config_hash[:12]} does not match {expected_hash[:12]}")
    image_bytes = 3 * h.image_width * h.image_height
    for i, frame in enumerate(episode.frames):
        if frame.tick != i * h.frame_period:
            raise EpisodeFormatError(f"frame {i} at tick {frame.tick}, expected {i * h.frame_period}")
        if len(frame.q) != h.q_dim or len(frame.action) != h.action_dim:
            raise EpisodeFormatError(f"frame {i} has wrong joint or action length")
        if len(frame.touch) != h.n_cells or len(frame.proximity) != h.n_cells:
            raise EpisodeFormatError(f"frame {i} has wrong tactile length")
        if not np.all(np.isfinite(frame.action)) or not np.all(np.isfinite(frame.q)):
            raise EpisodeFormatError(f"frame {i} has non-finite values")
        if len(base64.b64decode(frame.image)) != image_bytes:
            raise EpisodeFormatError(f"frame {i} image is not {h.image_width}x{h.image_height} RGB")


def write_episode(path: str, episode: Episode) -> str:
    """Write an episode file and return its SHA-256."""
    blob = episode_bytes(episode)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(blob)
    return hashlib.sha256(blob).hexdigest()


def read_episode(path: str, expected_hash: Optional[str] = None) -> Episode:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise EpisodeFormatError(f"{path} is empty")
    try:
        header = EpisodeHeader.model_validate_json(lines[0])
        frames = [Frame.model_validate_json(line) for line in lines[1:]]
    except ValidationError as e:
        raise EpisodeFormatError(f"{path} is malformed: {e}")
    episode = Episode(header=header, frames=frames)
    validate_episode(episode, expected_hash)
    return episode


class ManifestEntry(BaseModel):
    file: str
    sha256: str
    size: str
    position: float
    seed: int
    frames: int
    discarded: int = 0


class DatasetManifest(BaseModel):
    task: str
    config_hash: str
    episodes: List[ManifestEntry]
    discarded: int = 0
    failures: List[str] = []

    def manifest_bytes(self) -> bytes:
        return (json.dumps(self.model_dump(mode="json"), indent=2, sort_keys=True) + "\n").encode("utf-8")

    def manifest_hash(self) -> str:
        return hashlib.sha256(self.manifest_bytes()).hexdigest()


def write_manifest(directory: str, manifest: DatasetManifest) -> str:
    path = Path(directory) / MANIFEST_NAME
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(manifest.manifest_bytes())
    return manifest.manifest_hash()


def read_manifest(directory: str, expected_hash: Optional[str] = None) -> DatasetManifest:
    """Load and verify a dataset manifest and its episode checksums.

    Raises:
        EpisodeFormatError: If the manifest or an episode file is inconsistent
    """
    path = Path(directory) / MANIFEST_NAME
    if not path.exists():
        raise EpisodeFormatError(f"{directory} has no {MANIFEST_NAME}")
    try:
        manifest = DatasetManifest.model_validate_json(path.read_text(encoding="utf-8"))
    except ValidationError as e:
        raise EpisodeFormatError(f"malformed manifest: {e}")
    if expected_hash is not None and manifest.config_hash != expected_hash:
        raise EpisodeFormatError(f"dataset was collected under config {manifest.config_hash[:12]}")
    for entry in manifest.episodes:
        blob = (Path(directory) / entry.file).read_bytes()
        if hashlib.sha256(blob).hexdigest() != entry.sha256:
            raise EpisodeFormatError(f"checksum mismatch for {entry.file}")
    return manifest


def load_dataset(directory: str, expected_hash: Optional[str] = None) -> List[Episode]:
    manifest = read_manifest(directory, expected_hash)
    episodes = [read_episode(str(Path(directory) / entry.file), manifest.config_hash) for entry in manifest.episodes]
    logger.info(f"Loaded {len(episodes)} episodes from {directory}")
    return episodes
