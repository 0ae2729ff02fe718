"""Codec configuration and its canonical digest.

The digest covers only fields that both sides of the wire must agree on for
a bitstream to decode correctly (network dimensions, quantization step,
sampling factors, compensation mode). Run-level knobs such as training
weights, GoF length, and seeds are deliberately excluded so that a model
trained with one GoF length can encode at another.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, asdict, replace

from .errors import DataError

COMPENSATION_MODES = ("per-control-point", "per-gaussian")

# Fields hashed into the config digest, in canonical order.
STRUCTURAL_FIELDS = (
    "downscale_factor",
    "knn_k",
    "hashgrid_levels",
    "hashgrid_features",
    "hashgrid_table_log2",
    "hashgrid_base_res",
    "hashgrid_max_res_log2",
    "quant_step",
    "latent_dim",
    "freq_octaves",
    "feature_dim",
    "hidden_dim",
    "fusion_hidden_dim",
    "context_dim",
    "compensation_mode",
    "distance_scale",
    "refine_full_sh",
)


@dataclass(frozen=True)
class CodecConfig:
    """All knobs of the codec. Defaults reproduce the reference setting."""

    # Structure: must match between encoder and decoder.
    downscale_factor: int = 70          # control points = ceil(N / this)
    knn_k: int = 30                     # neighbors per control point
    hashgrid_levels: int = 16
    hashgrid_features: int = 8
    hashgrid_table_log2: int = 16
    hashgrid_base_res: int = 16
    hashgrid_max_res_log2: int = 19     # per-level resolution cap
    quant_step: float = 1.0
    latent_dim: int = 16
    freq_octaves: int = 6
    feature_dim: int = 64
    hidden_dim: int = 64                # hidden width of the small MLPs
    fusion_hidden_dim: int = 128        # fusion net and refinement head
    context_dim: int = 32
    compensation_mode: str = "per-control-point"
    distance_scale: float = 1.0         # multiplies distances in the weight exponent
    refine_full_sh: bool = False        # refine all 48 SH coeffs instead of DC only

    # Run parameters: not part of the digest.
    lambda_size: float = 1e-3
    lambda_dssim: float = 0.2
    gof_length: int = 30
    seed: int = 0

    def validate(self) -> None:
        if self.downscale_factor < 1:
            raise DataError("downscale_factor must be >= 1")
        if self.knn_k < 1:
            raise DataError("knn_k must be >= 1")
        if self.quant_step <= 0:
            raise DataError("quant_step must be > 0")
        if self.latent_dim < 1:
            raise DataError("latent_dim must be >= 1")
        if self.lambda_size < 0:
            raise DataError("lambda_size must be >= 0")
        if not 0.0 <= self.lambda_dssim <= 1.0:
            raise DataError("lambda_dssim must be in [0, 1]")
        if self.hashgrid_levels < 1:
            raise DataError("hashgrid_levels must be >= 1")
        if self.freq_octaves < 1:
            raise DataError("freq_octaves must be >= 1")
        if self.gof_length < 1:
            raise DataError("gof_length must be >= 1")
        if self.compensation_mode not in COMPENSATION_MODES:
            raise DataError(
                f"compensation_mode must be one of {COMPENSATION_MODES}, "
                f"got {self.compensation_mode!r}"
            )

    def canonical_json(self) -> str:
        """Canonical serialization of the structural fields only."""
        values = asdict(self)
        payload = {name: values[name] for name in STRUCTURAL_FIELDS}
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))

    def digest(self) -> bytes:
        """32-byte SHA-256 of the canonical structural configuration."""
        return hashlib.sha256(self.canonical_json().encode("utf-8")).digest()

    def digest_hex(self) -> str:
        return self.digest().hex()

    def with_overrides(self, **kwargs) -> "CodecConfig":
        cfg = replace(self, **kwargs)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "CodecConfig":
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        cfg = cls(**known)
        cfg.validate()
        return cfg
