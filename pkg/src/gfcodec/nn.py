"""Minimal learnable building blocks with analytic gradients.

Everything here is plain numpy in double precision: dense networks with a
cached-activation forward/backward pair, sinusoidal frequency encoding, a
multi-resolution hashed voxel grid with trilinear interpolation, and Adam.
There is no general autodiff; each consumer chains these backward functions
by hand along the codec's fixed computation graph.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, TrainingDivergedError

LEAKY_SLOPE = 0.01
_HASH_PRIMES = np.array([1, 2654435761, 805459861], dtype=np.uint64)


# ---------------------------------------------------------------------------
# frequency encoding


def freq_encode(x: np.ndarray, octaves: int) -> np.ndarray:
    """Sinusoidal encoding: per scalar and octave l, (sin(2^l pi x), cos(2^l pi x)).

    Output is input-major, then octave, then (sin, cos); width 2 * d * octaves.
    """
    if octaves < 1:
        raise DataError("freq_encode: octaves must be >= 1")
    x = np.asarray(x, dtype=np.float64)
    scales = (2.0 ** np.arange(octaves)) * np.pi
    args = x[..., :, None] * scales  # (..., d, F)
    out = np.stack([np.sin(args), np.cos(args)], axis=-1)  # (..., d, F, 2)
    return out.reshape(*x.shape[:-1], x.shape[-1] * octaves * 2)


def freq_encode_backward(x: np.ndarray, octaves: int, dout: np.ndarray) -> np.ndarray:
    """Gradient of freq_encode with respect to its input."""
    x = np.asarray(x, dtype=np.float64)
    scales = (2.0 ** np.arange(octaves)) * np.pi
    args = x[..., :, None] * scales
    d = dout.reshape(*x.shape[:-1], x.shape[-1], octaves, 2)
    # d sin = cos * scale, d cos = -sin * scale
    grad = d[..., 0] * np.cos(args) * scales - d[..., 1] * np.sin(args) * scales
    return grad.sum(axis=-1)


# ---------------------------------------------------------------------------
# dense networks


@dataclass
class DenseLayer:
    weight: np.ndarray          # (fan_in, fan_out)
    bias: np.ndarray            # (fan_out,)
    activation: str             # "leaky_relu" | "identity"


class DenseNet:
    """Affine + activation chain; hidden layers are leaky-relu."""

    def __init__(self, layers: list[DenseLayer]):
        for prev, nxt in zip(layers, layers[1:]):
            if prev.weight.shape[1] != nxt.weight.shape[0]:
                raise DataError("DenseNet: adjacent layer dimensions do not chain")
        self.layers = layers

    @classmethod
    def create(
        cls,
        dims: list[int],
        rng: np.random.Generator,
        zero_last: bool = False,
    ) -> "DenseNet":
        """He-initialized network over dims [in, h..., out].

        zero_last nulls the final layer so a fresh network outputs zero.
        """
        layers = []
        last = len(dims) - 2
        for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
            std = np.sqrt(2.0 / fan_in)
            w = rng.normal(0.0, std, size=(fan_in, fan_out))
            b = np.zeros(fan_out)
            act = "identity" if i == last else "leaky_relu"
            if zero_last and i == last:
                w = np.zeros_like(w)
            layers.append(DenseLayer(w, b, act))
        return cls(layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[0]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weight.shape[1]

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, list]:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.input_dim:
            raise DataError(
                f"DenseNet: input width {x.shape[-1]}, expected {self.input_dim}"
            )
        cache = []
        for layer in self.layers:
            z = x @ layer.weight + layer.bias
            cache.append((x, z))
            if layer.activation == "leaky_relu":
                x = np.where(z > 0, z, LEAKY_SLOPE * z)
            else:
                x = z
        return x, cache

    def backward(self, cache: list, dout: np.ndarray):
        """Exact reverse-mode gradients.

        Returns ([(dw, db)] per layer, gradient w.r.t. the input).
        """
        if len(cache) != len(self.layers):
            raise DataError("DenseNet: cache does not match this network")
        grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(self.layers)
        dy = np.asarray(dout, dtype=np.float64)
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            x, z = cache[i]
            if layer.activation == "leaky_relu":
                dz = dy * np.where(z > 0, 1.0, LEAKY_SLOPE)
            else:
                dz = dy
            flat_x = x.reshape(-1, x.shape[-1])
            flat_dz = dz.reshape(-1, dz.shape[-1])
            grads[i] = (flat_x.T @ flat_dz, flat_dz.sum(axis=0))
            dy = dz @ layer.weight.T
        return grads, dy

    def named_parameters(self, prefix: str) -> dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.layers):
            out[f"{prefix}.{i}.weight"] = layer.weight
            out[f"{prefix}.{i}.bias"] = layer.bias
        return out

    def named_grads(self, prefix: str, grads) -> dict[str, np.ndarray]:
        out = {}
        for i, (dw, db) in enumerate(grads):
            out[f"{prefix}.{i}.weight"] = dw
            out[f"{prefix}.{i}.bias"] = db
        return out


# ---------------------------------------------------------------------------
# multi-resolution hash grid


class HashGrid:
    """Hashed voxel grid with trilinear interpolation, Instant-NGP style.

    Per level, a position is normalized into the bounding box, its voxel's
    eight corner features are fetched through a spatial hash (XOR of
    coordinate-prime products, masked to the table size), and trilinearly
    interpolated. Level outputs are concatenated.
    """

    def __init__(
        self,
        tables: np.ndarray,
        resolutions: np.ndarray,
        bbox_lo: np.ndarray | None = None,
        bbox_hi: np.ndarray | None = None,
    ):
        self.tables = tables               # (L, T, F) float64
        self.resolutions = resolutions     # (L,) int64
        self.bbox_lo = bbox_lo
        self.bbox_hi = bbox_hi

    @classmethod
    def create(
        cls,
        levels: int,
        features: int,
        table_log2: int,
        base_res: int,
        max_res_log2: int,
        rng: np.random.Generator,
    ) -> "HashGrid":
        res = np.minimum(
            base_res * (2 ** np.arange(levels, dtype=np.int64)), 2 ** max_res_log2
        )
        tables = rng.uniform(-1e-4, 1e-4, size=(levels, 2 ** table_log2, features))
        return cls(tables=tables, resolutions=res)

    @property
    def levels(self) -> int:
        return self.tables.shape[0]

    @property
    def features(self) -> int:
        return self.tables.shape[2]

    @property
    def output_dim(self) -> int:
        return self.levels * self.features

    def set_bbox(self, lo: np.ndarray, hi: np.ndarray) -> None:
        self.bbox_lo = np.asarray(lo, dtype=np.float64)
        self.bbox_hi = np.asarray(hi, dtype=np.float64)

    def _corner_data(self, positions: np.ndarray):
        if self.bbox_lo is None:
            raise DataError("HashGrid: bounding box not set")
        p = np.asarray(positions, dtype=np.float64)
        extent = np.maximum(self.bbox_hi - self.bbox_lo, 1e-12)
        u = np.clip((p - self.bbox_lo) / extent, 0.0, 1.0)

        res = self.resolutions[:, None, None].astype(np.float64)  # (L,1,1)
        scaled = u[None, :, :] * res                               # (L,B,3)
        c0 = np.minimum(np.floor(scaled), res - 1.0).astype(np.int64)
        frac = scaled - c0                                         # (L,B,3)

        offsets = np.array(
            [[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)],
            dtype=np.int64,
        )                                                          # (8,3)
        corners = c0[:, :, None, :] + offsets[None, None, :, :]    # (L,B,8,3)
        hashed = self._hash(corners)                               # (L,B,8)

        w_axis = np.where(offsets[None, None, :, :] == 1, frac[:, :, None, :], 1.0 - frac[:, :, None, :])
        weights = w_axis.prod(axis=-1)                             # (L,B,8)
        return hashed, weights

    def _hash(self, coords: np.ndarray) -> np.ndarray:
        mask = np.uint64(self.tables.shape[1] - 1)
        c = coords.astype(np.uint64)
        h = c[..., 0] * _HASH_PRIMES[0]
        h ^= c[..., 1] * _HASH_PRIMES[1]
        h ^= c[..., 2] * _HASH_PRIMES[2]
        return (h & mask).astype(np.int64)

    def query(self, positions: np.ndarray, chunk: int = 8192):
        """Interpolated features, shape (B, levels * features), plus a cache
        for backward. Positions outside the box are clamped onto it."""
        p = np.asarray(positions, dtype=np.float64)
        b = p.shape[0]
        out = np.empty((b, self.output_dim))
        idx_parts, w_parts = [], []
        for lo in range(0, b, chunk):
            hi = min(lo + chunk, b)
            hashed, weights = self._corner_data(p[lo:hi])
            lvl = np.arange(self.levels)[:, None, None]
            feats = self.tables[lvl, hashed]                       # (L,b,8,F)
            interp = (feats * weights[..., None]).sum(axis=2)      # (L,b,F)
            out[lo:hi] = np.moveaxis(interp, 0, 1).reshape(hi - lo, -1)
            idx_parts.append(hashed)
            w_parts.append(weights)
        cache = (
            np.concatenate(idx_parts, axis=1),
            np.concatenate(w_parts, axis=1),
        )
        return out, cache

    def backward(self, cache, dout: np.ndarray) -> np.ndarray:
        """Gradient w.r.t. the feature tables, shape (L, T, F)."""
        hashed, weights = cache
        levels, b, _ = hashed.shape
        d = np.asarray(dout, dtype=np.float64).reshape(b, levels, self.features)
        d = np.moveaxis(d, 1, 0)                                   # (L,B,F)
        dtables = np.zeros_like(self.tables)
        contrib = weights[..., None] * d[:, :, None, :]            # (L,B,8,F)
        for l in range(levels):
            np.add.at(dtables[l], hashed[l].ravel(), contrib[l].reshape(-1, self.features))
        return dtables

    def named_parameters(self, prefix: str) -> dict[str, np.ndarray]:
        return {f"{prefix}.tables": self.tables}


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    """Per-parameter moment accumulators for bias-corrected Adam."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_init(params: dict[str, np.ndarray], lr: float = 1e-3) -> AdamState:
    state = AdamState(lr=lr)
    for name, p in params.items():
        state.m[name] = np.zeros_like(p)
        state.v[name] = np.zeros_like(p)
    return state


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One in-place bias-corrected Adam update over the named parameters.

    Parameters absent from grads are left untouched. Non-finite gradients
    abort with the offending parameter named.
    """
    state.step += 1
    b1c = 1.0 - state.beta1 ** state.step
    b2c = 1.0 - state.beta2 ** state.step
    for name, g in grads.items():
        if name not in params:
            raise DataError(f"adam_step: unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise DataError(f"adam_step: gradient shape mismatch for {name!r}")
        if not np.isfinite(g).all():
            raise TrainingDivergedError(f"non-finite gradient in {name!r} at step {state.step}")
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        params[name] -= state.lr * (m / b1c) / (np.sqrt(v / b2c) + state.eps)
    return params, state
