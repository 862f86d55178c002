"""Network building blocks: adaptive-receptive-field MoE, FiLM bridge, fusion head.

All forward functions accept parameters holding either plain arrays
(pure inference) or graph-attached :class:`~moediff.autodiff.Var` handles
(training); see :func:`moediff.backbone.lift_params`.

Layouts: block inputs and outputs are time-major feature maps [N, T, L]
with N = B * C independent per-channel maps; convolutions run internally
in [N, L, T].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .tensor import as_tensor


@dataclass
class ConvParams:
    weight: object  # [Cout, Cin, S]
    bias: object  # [Cout]

    @property
    def kernel_size(self) -> int:
        return ad.value_of(self.weight).shape[2]


@dataclass
class LinearParams:
    weight: object  # [In, Out]
    bias: object  # [Out]


@dataclass
class RFAMoEParams:
    """Adaptive receptive field block: per-map top-1 choice among convolution
    experts of distinct kernel sizes, gated activation, cross-channel fusion."""

    experts: list  # ConvParams, distinct odd kernel sizes, L_in -> L
    router: LinearParams  # L_in -> E logits
    in_gamma: object  # [L] instance-norm affine
    in_beta: object  # [L]
    gate_proj: ConvParams  # pointwise, L/2 -> L
    fuse: ConvParams  # pointwise, C*L -> C*L
    res_proj: object = None  # ConvParams (L_in -> L) when widths differ, else None
    gate_mode: str = "unit"  # "unit": routed gate renormalized to 1; "raw": softmax prob

    def check(self) -> "RFAMoEParams":
        sizes = [e.kernel_size for e in self.experts]
        if len(self.experts) < 1:
            raise ValueError("rfamoe: need at least one expert")
        if len(set(sizes)) != len(sizes) or any(s % 2 == 0 for s in sizes):
            raise ValueError(f"rfamoe: expert kernel sizes must be distinct odd, got {sizes}")
        if self.gate_proj.kernel_size != 1 or self.fuse.kernel_size != 1:
            raise ValueError("rfamoe: gate projection and fusion convolutions must have kernel size 1")
        if self.gate_mode not in ("unit", "raw"):
            raise ValueError(f"rfamoe: gate_mode must be 'unit' or 'raw', got {self.gate_mode!r}")
        return self


@dataclass
class BridgeParams:
    """Feature-wise affine modulation conditioned on the diffusion step."""

    film: LinearParams  # d_emb -> 2L, read as (gamma, beta)


@dataclass
class FusionMoEParams:
    """Head that merges K pointwise experts by gate-weighting their weights
    before a single convolution."""

    experts: list = field(default_factory=list)  # ConvParams, each [1, L, 1]
    router: LinearParams = None  # L -> K logits

    def check(self) -> "FusionMoEParams":
        if len(self.experts) < 1:
            raise ValueError("fusion head: need at least one expert")
        for k, e in enumerate(self.experts):
            w = ad.value_of(e.weight)
            if w.ndim != 3 or w.shape[0] != 1 or w.shape[2] != 1:
                raise ValueError(
                    f"fusion head: expert {k} must have shape [1, L, 1], got {w.shape}"
                )
        return self


def step_embedding(t: int, d_emb: int) -> np.ndarray:
    """Sinusoidal encoding of a diffusion step: interleaved
    (sin(t / 10000^(2i/d)), cos(t / 10000^(2i/d))) pairs."""
    if d_emb % 2 != 0:
        raise ValueError(f"step embedding size must be even, got {d_emb}")
    if t < 0:
        raise ValueError(f"step must be >= 0, got {t}")
    i = np.arange(d_emb // 2)
    angles = t * 10000.0 ** (-2.0 * i / d_emb)
    emb = np.empty(d_emb)
    emb[0::2] = np.sin(angles)
    emb[1::2] = np.cos(angles)
    return emb


def route_top1(features, router: LinearParams, gate_mode: str = "unit"):
    """Select one expert per feature map.

    ``features`` is [N, L_in, T]; maps are mean-pooled over time, routed
    through the linear layer, and the argmax expert wins (ties break to
    the lowest index). Unit mode renormalizes the selected gate to 1.0;
    raw mode keeps the softmax probability.
    """
    feats = as_tensor(features)
    if feats.ndim != 3:
        raise ValueError(f"route_top1: features must be [N, L_in, T], got shape {feats.shape}")
    pooled = feats.mean(axis=2)
    logits = pooled @ ad.value_of(router.weight) + ad.value_of(router.bias)
    idx = np.argmax(logits, axis=1)
    if gate_mode == "unit":
        gates = np.ones(len(idx))
    else:
        probs = ad.softmax(logits)
        gates = probs[np.arange(len(idx)), idx]
    return idx, gates


def rfamoe_forward(x, params: RFAMoEParams, dims: tuple[int, int]):
    """Apply the block to [N, T, L_in] feature maps, N = B * C.

    Stages: routed expert convolution (same padding), instance norm,
    gated split (gelu half times linear half), pointwise width restore,
    cross-channel kernel-1 fusion over the C*L axis, residual from input.
    """
    b, c = dims
    xv = ad.value_of(x)
    if xv.ndim != 3:
        raise ValueError(f"rfamoe: input must be [N, T, L], got shape {xv.shape}")
    n, t_len, l_in = xv.shape
    if b * c != n:
        raise ValueError(f"rfamoe: N={n} does not factor as B*C = {b}*{c}")
    l_out = ad.value_of(params.in_gamma).shape[0]
    if l_out % 2 != 0:
        raise ValueError(f"rfamoe: feature width must be even for the gated split, got {l_out}")

    xt = ad.transpose(x, (0, 2, 1))  # [N, L_in, T]

    # Routing decisions come from values only; gradients flow to the router
    # solely through the raw-probability gate when that mode is active.
    pooled = ad.mean(xt, axis=2)
    logits = ad.add(ad.matmul(pooled, params.router.weight), params.router.bias)
    sel = np.argmax(ad.value_of(logits), axis=1)

    routed = None
    for e, conv in enumerate(params.experts):
        rows = np.where(sel == e)[0]
        if rows.size == 0:
            continue
        sub = ad.take_rows(xt, rows)
        y = ad.conv1d(sub, conv.weight, conv.bias, padding="same")
        part = ad.scatter_rows(y, rows, n)
        routed = part if routed is None else ad.add(routed, part)
    if params.gate_mode == "raw":
        probs = ad.softmax(logits)
        gates = ad.reshape(ad.gather_cols(probs, sel), (n, 1, 1))
        routed = ad.mul(routed, gates)

    h = ad.instance_norm(routed, params.in_gamma, params.in_beta)
    half = l_out // 2
    gated = ad.mul(ad.gelu(ad.slice_axis(h, 1, 0, half)), ad.slice_axis(h, 1, half, l_out))
    body = ad.conv1d(gated, params.gate_proj.weight, params.gate_proj.bias, padding="same")

    fused = ad.conv1d(
        ad.reshape(body, (b, c * l_out, t_len)),
        params.fuse.weight,
        params.fuse.bias,
        padding="same",
    )
    fused = ad.reshape(fused, (n, l_out, t_len))

    if params.res_proj is None:
        if l_in != l_out:
            raise ValueError(
                f"rfamoe: width change {l_in} -> {l_out} requires a residual projection"
            )
        res = xt
    else:
        res = ad.conv1d(xt, params.res_proj.weight, params.res_proj.bias, padding="same")
    return ad.transpose(ad.add(fused, res), (0, 2, 1))


def bridge_forward(h, t: int, params: BridgeParams):
    """FiLM the [N, T, L] feature map: gamma(t) * h + beta(t) per channel."""
    w = params.film.weight
    d_emb, two_l = ad.value_of(w).shape
    l = two_l // 2
    emb = step_embedding(t, d_emb).reshape(1, d_emb)
    gb = ad.add(ad.matmul(emb, w), params.film.bias)  # [1, 2L]
    gamma = ad.reshape(ad.slice_axis(gb, 1, 0, l), (1, 1, l))
    beta = ad.reshape(ad.slice_axis(gb, 1, l, two_l), (1, 1, l))
    return ad.add(ad.mul(h, gamma), beta)


def fusion_moe_forward(x, params: FusionMoEParams, gates_override=None):
    """Merge K pointwise experts into one dynamic convolution per feature map.

    Gates are a dense softmax over all experts (every expert stays
    active); the merged weight for map n is sum_k gates[n, k] * W_k and
    likewise for the bias, applied as a single kernel-1 convolution.
    ``gates_override`` replaces the router output with fixed gates ([K] or
    [N, K]) for diagnostics and the averaging-theorem checks.
    """
    xv = ad.value_of(x)
    if xv.ndim != 3:
        raise ValueError(f"fusion head: input must be [N, T, L], got shape {xv.shape}")
    n, _, l = xv.shape
    k = len(params.experts)
    if gates_override is None:
        pooled = ad.mean(x, axis=1)  # [N, L]
        logits = ad.add(ad.matmul(pooled, params.router.weight), params.router.bias)
        gates = ad.softmax(logits)
    else:
        gates = as_tensor(gates_override)
        if gates.ndim == 1:
            gates = np.broadcast_to(gates, (n, k)).copy()
        if gates.shape != (n, k):
            raise ValueError(f"fusion head: gates must be [K] or [N, K], got {gates.shape}")

    w_stack = ad.concat([ad.reshape(e.weight, (1, l)) for e in params.experts], axis=0)  # [K, L]
    b_stack = ad.concat([ad.reshape(e.bias, (1, 1)) for e in params.experts], axis=0)  # [K, 1]
    merged_w = ad.matmul(gates, w_stack)  # [N, L]
    merged_b = ad.matmul(gates, b_stack)  # [N, 1]
    out = ad.bmm(x, ad.reshape(merged_w, (n, l, 1)))  # [N, T, 1]
    return ad.add(out, ad.reshape(merged_b, (n, 1, 1)))


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------


def init_conv(rng: np.random.Generator, c_out: int, c_in: int, s: int) -> ConvParams:
    std = 1.0 / math.sqrt(c_in * s)
    return ConvParams(weight=rng.normal(0.0, std, (c_out, c_in, s)), bias=np.zeros(c_out))


def init_linear(rng: np.random.Generator, d_in: int, d_out: int, std: float | None = None) -> LinearParams:
    std = 1.0 / math.sqrt(d_in) if std is None else std
    return LinearParams(weight=rng.normal(0.0, std, (d_in, d_out)), bias=np.zeros(d_out))


def init_rfamoe(
    rng: np.random.Generator,
    l_in: int,
    l_out: int,
    channels: int,
    kernel_sizes: tuple[int, ...],
    gate_mode: str = "unit",
) -> RFAMoEParams:
    return RFAMoEParams(
        experts=[init_conv(rng, l_out, l_in, s) for s in kernel_sizes],
        router=init_linear(rng, l_in, len(kernel_sizes)),
        in_gamma=np.ones(l_out),
        in_beta=np.zeros(l_out),
        gate_proj=init_conv(rng, l_out, l_out // 2, 1),
        fuse=init_conv(rng, channels * l_out, channels * l_out, 1),
        res_proj=None if l_in == l_out else init_conv(rng, l_out, l_in, 1),
        gate_mode=gate_mode,
    ).check()


def init_bridge(rng: np.random.Generator, d_emb: int, l: int) -> BridgeParams:
    # Bias starts at (gamma=1, beta=0) so the bridge is near-identity at init.
    film = init_linear(rng, d_emb, 2 * l, std=0.01)
    film.bias = np.concatenate([np.ones(l), np.zeros(l)])
    return BridgeParams(film=film)


def init_fusion(rng: np.random.Generator, l: int, k: int) -> FusionMoEParams:
    return FusionMoEParams(
        experts=[init_conv(rng, 1, l, 1) for _ in range(k)],
        router=init_linear(rng, l, k),
    ).check()
