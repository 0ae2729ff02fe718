"""Quantization, the dual prior probability model, and the rate loss.

The latent stream is modeled per element as a Gaussian whose mean and scale
come from fusing two priors: a learned per-channel factorized density over
the quantized hyper-latent, and a spatial-temporal context computed from the
decoded reference frame (hash grid at control positions plus an attribute
MLP, summed). Everything the context path consumes is decoder-available.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .errors import DataError
from .nn import DenseNet, HashGrid

SIGMA_MIN = 1e-4
PROB_FLOOR = 2.0 ** -16
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


# ---------------------------------------------------------------------------
# quantization


def quantize(
    y: np.ndarray,
    qstep: float,
    mode: str,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Lattice quantization with the training-time noise relaxation.

    train: y + Uniform(-q/2, q/2) from the supplied generator.
    test:  round(y / q) * q with half-integer ties away from zero.
    """
    if qstep <= 0:
        raise DataError("quantize: qstep must be > 0")
    y = np.asarray(y, dtype=np.float64)
    if mode == "train":
        if rng is None:
            raise DataError("quantize: train mode needs a noise source")
        return y + rng.uniform(-qstep / 2.0, qstep / 2.0, size=y.shape)
    if mode == "test":
        scaled = y / qstep
        return np.sign(scaled) * np.floor(np.abs(scaled) + 0.5) * qstep
    raise DataError(f"quantize: unknown mode {mode!r}")


def quantize_to_symbols(y_hat: np.ndarray, qstep: float) -> np.ndarray:
    """Integer lattice indices of test-mode quantized values."""
    return np.rint(np.asarray(y_hat, dtype=np.float64) / qstep).astype(np.int64)


# ---------------------------------------------------------------------------
# factorized prior (per-channel monotone cumulative)


def _softplus(x):
    return np.where(x > 0, x + np.log1p(np.exp(-np.abs(x))), np.log1p(np.exp(np.minimum(x, 0))))


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class FactorizedPrior:
    """Learned univariate density per channel.

    The cumulative is a chain of monotone maps: matrices constrained
    positive through softplus, tanh-gated residual terms between layers,
    and a final sigmoid. Filter widths default to (3, 3, 3).
    """

    def __init__(self, matrices, biases, factors):
        self.matrices = matrices    # list of (C, r_out, r_in)
        self.biases = biases        # list of (C, r_out, 1)
        self.factors = factors      # list of (C, r_out, 1), one fewer than matrices

    @classmethod
    def create(
        cls,
        channels: int,
        rng: np.random.Generator,
        filters: tuple[int, ...] = (3, 3, 3),
        init_scale: float = 10.0,
    ) -> "FactorizedPrior":
        dims = (1, *filters, 1)
        scale = init_scale ** (1.0 / (len(filters) + 1))
        matrices, biases, factors = [], [], []
        for i in range(len(dims) - 1):
            init = np.log(np.expm1(1.0 / scale / dims[i + 1]))
            matrices.append(np.full((channels, dims[i + 1], dims[i]), init))
            biases.append(rng.uniform(-0.5, 0.5, size=(channels, dims[i + 1], 1)))
            if i < len(dims) - 2:
                factors.append(np.zeros((channels, dims[i + 1], 1)))
        return cls(matrices, biases, factors)

    @property
    def channels(self) -> int:
        return self.matrices[0].shape[0]

    def _logits(self, x: np.ndarray):
        """Pre-sigmoid cumulative logits for x of shape (B, C)."""
        v = np.asarray(x, dtype=np.float64).T[:, None, :]   # (C, 1, B)
        cache = []
        for i, (h, b) in enumerate(zip(self.matrices, self.biases)):
            hp = _softplus(h)
            u = np.einsum("cij,cjb->cib", hp, v) + b
            if i < len(self.factors):
                a = np.tanh(self.factors[i])
                tu = np.tanh(u)
                cache.append((v, hp, u, a, tu))
                v = u + a * tu
            else:
                cache.append((v, hp, u, None, None))
                v = u
        return v[:, 0, :].T, cache                          # (B, C)

    def _logits_backward(self, cache, dlogits: np.ndarray):
        dv = np.asarray(dlogits, dtype=np.float64).T[:, None, :]  # (C,1,B)
        grads = {}
        for i in range(len(self.matrices) - 1, -1, -1):
            v, hp, u, a, tu = cache[i]
            if a is not None:
                du = dv * (1.0 + a * (1.0 - tu ** 2))
                da_raw = (dv * tu).sum(axis=2, keepdims=True) * (
                    1.0 - np.tanh(self.factors[i]) ** 2
                )
                grads[f"factor{i}"] = grads.get(f"factor{i}", 0) + da_raw
            else:
                du = dv
            grads[f"bias{i}"] = du.sum(axis=2, keepdims=True)
            dh_pos = np.einsum("cib,cjb->cij", du, v)
            grads[f"matrix{i}"] = dh_pos * _sigmoid(self.matrices[i])
            dv = np.einsum("cij,cib->cjb", hp, du)
        return grads, dv[:, 0, :].T

    def likelihood(self, x: np.ndarray, qstep: float):
        """P(value in the q-wide bin around x) per element, floored.

        Returns (probabilities, cache) for x of shape (B, C).
        """
        upper_logits, up_cache = self._logits(x + qstep / 2.0)
        lower_logits, lo_cache = self._logits(x - qstep / 2.0)
        # evaluate both sigmoids on the side where they are accurate
        sign = -np.sign(upper_logits + lower_logits)
        sign[sign == 0] = 1.0
        p = np.abs(_sigmoid(sign * upper_logits) - _sigmoid(sign * lower_logits))
        floored = p < PROB_FLOOR
        p = np.maximum(p, PROB_FLOOR)
        cache = (up_cache, lo_cache, upper_logits, lower_logits, floored)
        return p, cache

    def likelihood_backward(self, cache, dp: np.ndarray):
        """Gradients of the likelihood: (param grads, gradient w.r.t. x)."""
        up_cache, lo_cache, upper, lower, floored = cache
        d = np.where(floored, 0.0, np.asarray(dp, dtype=np.float64))
        su = _sigmoid(upper)
        sl = _sigmoid(lower)
        dupper = d * su * (1.0 - su)
        dlower = -d * sl * (1.0 - sl)
        g_up, dx_up = self._logits_backward(up_cache, dupper)
        g_lo, dx_lo = self._logits_backward(lo_cache, dlower)
        grads = {k: g_up[k] + g_lo[k] for k in g_up}
        return grads, dx_up + dx_lo

    def lattice_pmf(self, symbols: np.ndarray, qstep: float) -> np.ndarray:
        """Per-channel probabilities at the given lattice points.

        symbols (S,) integers; returns (C, S).
        """
        x = symbols.astype(np.float64)[:, None] * qstep
        x = np.repeat(x, self.channels, axis=1)             # (S, C)
        p, _ = self.likelihood(x, qstep)
        return p.T

    def named_parameters(self, prefix: str) -> dict[str, np.ndarray]:
        out = {}
        for i, m in enumerate(self.matrices):
            out[f"{prefix}.matrix{i}"] = m
        for i, b in enumerate(self.biases):
            out[f"{prefix}.bias{i}"] = b
        for i, a in enumerate(self.factors):
            out[f"{prefix}.factor{i}"] = a
        return out

    def named_grads(self, prefix: str, grads: dict) -> dict[str, np.ndarray]:
        return {f"{prefix}.{k}": v for k, v in grads.items()}


# ---------------------------------------------------------------------------
# spatial-temporal context and parameter fusion


@dataclass
class EntropyParams:
    """Per-element Gaussian parameters plus the fused context they came from."""

    mean: np.ndarray      # (B, latent_dim)
    sigma: np.ndarray     # (B, latent_dim), >= SIGMA_MIN
    context: np.ndarray   # (B, context_dim)


def spatial_temporal_context(
    positions: np.ndarray,
    attributes: np.ndarray,
    grid: HashGrid,
    pos_net: DenseNet,
    attr_net: DenseNet,
):
    """Context prior from decoder-available reference data.

    Hash-grid features at the reference positions go through one MLP, the
    (normalized) reference attributes through another; the two are summed.
    Returns (context, cache).
    """
    feats, grid_cache = grid.query(positions)
    pos_ctx, pos_cache = pos_net.forward(feats)
    attr_ctx, attr_cache = attr_net.forward(attributes)
    context = pos_ctx + attr_ctx
    return context, (grid_cache, pos_cache, attr_cache)


def spatial_temporal_context_backward(
    cache,
    dcontext: np.ndarray,
    grid: HashGrid,
    pos_net: DenseNet,
    attr_net: DenseNet,
):
    """Gradients for the grid tables and both context MLPs."""
    grid_cache, pos_cache, attr_cache = cache
    pos_grads, dfeats = pos_net.backward(pos_cache, dcontext)
    attr_grads, _ = attr_net.backward(attr_cache, dcontext)
    dtables = grid.backward(grid_cache, dfeats)
    return pos_grads, attr_grads, dtables


def predict_params(context: np.ndarray, z_hat: np.ndarray, fusion_net: DenseNet):
    """Fuse context and decoded hyper-latent into per-element (mean, scale).

    The fusion net maps concat(context, z_hat) to 2 * latent_dim outputs;
    scales go through softplus and are clamped at SIGMA_MIN.
    """
    latent_dim = z_hat.shape[1]
    fused_in = np.concatenate([context, z_hat], axis=1)
    raw, net_cache = fusion_net.forward(fused_in)
    if raw.shape[1] != 2 * latent_dim:
        raise DataError(
            f"fusion net emits {raw.shape[1]} values, expected {2 * latent_dim}"
        )
    mean = raw[:, :latent_dim]
    raw_sigma = raw[:, latent_dim:]
    soft = _softplus(raw_sigma)
    clamped = soft < SIGMA_MIN
    sigma = np.maximum(soft, SIGMA_MIN)
    params = EntropyParams(mean=mean, sigma=sigma, context=context)
    cache = (net_cache, raw_sigma, clamped, context.shape[1])
    return params, cache


def predict_params_backward(
    cache, dmean: np.ndarray, dsigma: np.ndarray, fusion_net: DenseNet
):
    """Returns (fusion grads, dcontext, dz_hat)."""
    net_cache, raw_sigma, clamped, ctx_dim = cache
    draw_sigma = np.where(clamped, 0.0, dsigma) * _sigmoid(raw_sigma)
    draw = np.concatenate([dmean, draw_sigma], axis=1)
    grads, dfused = fusion_net.backward(net_cache, draw)
    return grads, dfused[:, :ctx_dim], dfused[:, ctx_dim:]


# ---------------------------------------------------------------------------
# Gaussian likelihood and rate


def gaussian_likelihood(
    y_hat: np.ndarray, mean: np.ndarray, sigma: np.ndarray, qstep: float
):
    """Probability of the q-wide bin around y_hat under N(mean, sigma).

    Computed through the normal CDF in double precision, floored at
    PROB_FLOOR. Returns (probabilities, cache).
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma < SIGMA_MIN):
        raise DataError(f"gaussian_likelihood: sigma below {SIGMA_MIN}")
    t = np.asarray(y_hat, dtype=np.float64) - mean
    # symmetry: evaluate on the lower tail where the CDF is accurate
    ta = -np.abs(t)
    hi = (ta + qstep / 2.0) / sigma
    lo = (ta - qstep / 2.0) / sigma
    p = ndtr(hi) - ndtr(lo)
    floored = p < PROB_FLOOR
    p = np.maximum(p, PROB_FLOOR)
    cache = (t, sigma, hi, lo, floored, qstep)
    return p, cache


def gaussian_likelihood_backward(cache, dp: np.ndarray):
    """Gradients w.r.t. (y_hat, mean, sigma)."""
    t, sigma, hi, lo, floored, qstep = cache
    d = np.where(floored, 0.0, np.asarray(dp, dtype=np.float64))
    phi_hi = _INV_SQRT_2PI * np.exp(-0.5 * hi * hi)
    phi_lo = _INV_SQRT_2PI * np.exp(-0.5 * lo * lo)
    # derivative w.r.t. ta = -|t|, then unfold the reflection
    dta = d * (phi_hi - phi_lo) / sigma
    dt = np.where(t > 0, -dta, dta)
    dsigma = d * (-(phi_hi * hi) + (phi_lo * lo)) / sigma
    return dt, -dt, dsigma


def rate_loss(p_latent: np.ndarray, p_hyper: np.ndarray, n_control: int):
    """Estimated bits per control point: mean over control points of the
    summed negative log2 likelihood of both streams."""
    if n_control < 1:
        raise DataError("rate_loss: n_control must be >= 1")
    bits = -(np.log2(p_latent).sum() + np.log2(p_hyper).sum())
    return bits / n_control


def rate_loss_backward(
    p_latent: np.ndarray, p_hyper: np.ndarray, n_control: int, dloss: float = 1.0
):
    """Gradients w.r.t. both probability arrays."""
    c = -dloss / (n_control * np.log(2.0))
    return c / p_latent, c / p_hyper
