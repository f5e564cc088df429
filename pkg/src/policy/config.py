"""Policy architecture description and the named ablation variants."""
import hashlib
import json
from typing import Tuple

from pydantic import BaseModel, ConfigDict, model_validator

from src.utils.errors import InvalidConfig

REPLAY = "Replay"

VARIANTS = {
    "TACT": {},
    "TACT-w/o-vision": {"use_vision": False},
    "TACT-w/o-tactile": {"use_tactile": False},
    "TACT-GCN1": {"gcn_hidden": (16,)},
    "TACT-GCN2": {"gcn_hidden": (16, 32)},
    "TACT-GCN3": {"gcn_hidden": (16, 32, 64)},
}


class PolicyConfig(BaseModel):
    """Everything that shapes a trained policy; hashed into checkpoints."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    variant: str = "TACT"
    chunk_size: int = 20
    action_dim: int = 10
    q_dim: int = 6
    n_cells: int = 40
    d_model: int = 64
    heads: int = 4
    ffn_hidden: int = 128
    encoder_layers: int = 2
    decoder_layers: int = 2
    latent_dim: int = 16
    kl_weight: float = 10.0
    lr: float = 1e-4
    ensemble_decay: float = 0.1
    use_proprio: bool = True
    use_vision: bool = True
    use_tactile: bool = True
    gcn_hidden: Tuple[int, ...] = ()
    image_tokens: int = 12
    image_height: int = 48
    image_width: int = 64
    vision_channels: Tuple[int, int, int] = (8, 16, 32)

    @model_validator(mode="after")
    def _check(self):
        if self.chunk_size < 1:
            raise InvalidConfig("chunk_size must be at least 1")
        if not (self.use_proprio or self.use_vision or self.use_tactile):
            raise InvalidConfig("at least one modality must be enabled")
        if self.d_model % self.heads:
            raise InvalidConfig("d_model must be divisible by heads")
        if self.gcn_hidden and not self.use_tactile:
            raise InvalidConfig("graph layers need the tactile modality")
        if len(self.gcn_hidden) > 3 or any(h < 1 for h in self.gcn_hidden):
            raise InvalidConfig("at most three graph layers with positive widths")
        if self.image_height % 16 or self.image_width % 16:
            raise InvalidConfig("image dimensions must be multiples of 16")
        if (self.image_height // 16) * (self.image_width // 16) != self.image_tokens:
            raise InvalidConfig(f"a {self.image_width}x{self.image_height} image gives "
                                f"{(self.image_height // 16) * (self.image_width // 16)} tokens, "
                                f"not {self.image_tokens}")
        return self

    @property
    def gcn_depth(self) -> int:
        return len(self.gcn_hidden)

    @property
    def tactile_dim(self) -> int:
        return 2 * self.n_cells

    def condition_token_count(self) -> int:
        return int(self.use_proprio) + int(self.use_tactile) + (self.image_tokens if self.use_vision else 0)

    def config_hash(self) -> str:
        canonical = json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def variant_config(variant: str, **overrides) -> PolicyConfig:
    """PolicyConfig of a named variant with extra field overrides."""
    if variant not in VARIANTS:
        raise InvalidConfig(f"unknown policy variant '{variant}'; expected one of {sorted(VARIANTS)} or {REPLAY}")
    fields = {**overrides, **VARIANTS[variant], "variant": variant}
    return PolicyConfig(**fields)
