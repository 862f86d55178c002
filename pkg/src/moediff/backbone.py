"""Full noise estimator: parallel per-channel feature stacks over the noisy
signal and the masked condition, per-level FiLM injection, fusion head.

Also home of the parameter-tree utilities (named traversal, mapping,
checkpoint serialization) shared by training, gradient checks, and the CLI.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, is_dataclass, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Graph, Var
from .blocks import (
    BridgeParams,
    ConvParams,
    FusionMoEParams,
    LinearParams,
    RFAMoEParams,
    bridge_forward,
    fusion_moe_forward,
    init_bridge,
    init_conv,
    init_fusion,
    init_rfamoe,
    rfamoe_forward,
)
from .tensor import read_checkpoint, write_checkpoint


@dataclass
class LevelParams:
    main: RFAMoEParams
    cond: RFAMoEParams
    bridge: BridgeParams


@dataclass
class BackboneParams:
    lift_xt: ConvParams  # pointwise 1 -> L
    lift_cond: ConvParams
    levels: list  # LevelParams
    head: FusionMoEParams
    channels: int
    d_emb: int

    @property
    def width(self) -> int:
        return ad.value_of(self.lift_xt.weight).shape[0]

    @property
    def depth(self) -> int:
        return len(self.levels)


def init_backbone(
    rng: np.random.Generator,
    channels: int,
    width: int,
    depth: int,
    kernel_sizes: tuple[int, ...],
    head_experts: int,
    d_emb: int = 64,
    gate_mode: str = "unit",
) -> BackboneParams:
    if width % 2 != 0:
        raise ValueError(f"feature width must be even, got {width}")
    levels = [
        LevelParams(
            main=init_rfamoe(rng, width, width, channels, kernel_sizes, gate_mode),
            cond=init_rfamoe(rng, width, width, channels, kernel_sizes, gate_mode),
            bridge=init_bridge(rng, d_emb, width),
        )
        for _ in range(depth)
    ]
    return BackboneParams(
        lift_xt=init_conv(rng, width, 1, 1),
        lift_cond=init_conv(rng, width, 1, 1),
        levels=levels,
        head=init_fusion(rng, width, head_experts),
        channels=channels,
        d_emb=d_emb,
    )


def noise_estimate(x_t, x_bar, t: int, params: BackboneParams, head_gates=None):
    """Predict the injected noise from (x_t, masked condition, step t).

    Inputs are [B, C, Tlen]; each of the N = B*C channels becomes an
    independent feature map. Per level the condition path advances first
    and is FiLM-injected into the main path; the fusion head collapses the
    final width-L features back to one value per timestep.
    """
    xv, cv = ad.value_of(x_t), ad.value_of(x_bar)
    if xv.shape != cv.shape:
        raise ValueError(f"noise_estimate: x_t shape {xv.shape} != x_bar shape {cv.shape}")
    if xv.ndim != 3:
        raise ValueError(f"noise_estimate: inputs must be [B, C, Tlen], got shape {xv.shape}")
    if t < 1:
        raise ValueError(f"noise_estimate: step must be >= 1, got {t}")
    b, c, t_len = xv.shape
    if c != params.channels:
        raise ValueError(
            f"noise_estimate: input has {c} channels, parameters were built for {params.channels}"
        )
    n = b * c
    h = ad.conv1d(ad.reshape(x_t, (n, 1, t_len)), params.lift_xt.weight, params.lift_xt.bias)
    cond = ad.conv1d(
        ad.reshape(x_bar, (n, 1, t_len)), params.lift_cond.weight, params.lift_cond.bias
    )
    h = ad.transpose(h, (0, 2, 1))  # [N, T, L]
    cond = ad.transpose(cond, (0, 2, 1))
    for level in params.levels:
        cond = rfamoe_forward(cond, level.cond, (b, c))
        h = ad.add(rfamoe_forward(h, level.main, (b, c)), bridge_forward(cond, t, level.bridge))
    out = fusion_moe_forward(h, params.head, gates_override=head_gates)  # [N, T, 1]
    return ad.reshape(out, (b, c, t_len))


# ---------------------------------------------------------------------------
# parameter-tree utilities
# ---------------------------------------------------------------------------

_LEAF_TYPES = (np.ndarray, Var)


def _is_param_node(obj) -> bool:
    return is_dataclass(obj) or isinstance(obj, list) or isinstance(obj, _LEAF_TYPES)


def named_params(params, prefix: str = ""):
    """Yield (dotted name, leaf) pairs in a stable declaration order,
    e.g. ``levels.0.main.experts.2.weight``."""
    if isinstance(params, _LEAF_TYPES):
        yield prefix, params
    elif isinstance(params, list):
        for i, v in enumerate(params):
            yield from named_params(v, f"{prefix}.{i}" if prefix else str(i))
    elif is_dataclass(params):
        for f in fields(params):
            v = getattr(params, f.name)
            if v is None or not _is_param_node(v):
                continue
            yield from named_params(v, f"{prefix}.{f.name}" if prefix else f.name)


def map_params(fn, params):
    """Rebuild the tree with ``fn`` applied to every array/Var leaf."""
    if isinstance(params, _LEAF_TYPES):
        return fn(params)
    if isinstance(params, list):
        return [map_params(fn, v) for v in params]
    if is_dataclass(params):
        updates = {
            f.name: map_params(fn, getattr(params, f.name))
            for f in fields(params)
            if getattr(params, f.name) is not None and _is_param_node(getattr(params, f.name))
        }
        return replace(params, **updates)
    return params


def zip_map_params(fn, a, b):
    """Rebuild tree ``a`` with ``fn(leaf_a, leaf_b)`` over matching leaves."""
    if isinstance(a, _LEAF_TYPES):
        return fn(a, b)
    if isinstance(a, list):
        return [zip_map_params(fn, x, y) for x, y in zip(a, b)]
    if is_dataclass(a):
        updates = {
            f.name: zip_map_params(fn, getattr(a, f.name), getattr(b, f.name))
            for f in fields(a)
            if getattr(a, f.name) is not None and _is_param_node(getattr(a, f.name))
        }
        return replace(a, **updates)
    return a


def lift_params(graph: Graph, params):
    """Clone the tree with every array replaced by a graph leaf."""
    return map_params(lambda arr: graph.leaf(arr) if isinstance(arr, np.ndarray) else arr, params)


def grads_like(lifted_params, grad_map: dict[int, np.ndarray]):
    """Gradient tree matching ``lifted_params`` (zeros for unreached leaves)."""

    def pick(leaf):
        if not isinstance(leaf, Var):
            raise ValueError("grads_like expects a lifted (Var) parameter tree")
        g = grad_map.get(leaf.id)
        return np.zeros_like(leaf.value) if g is None else g

    return map_params(pick, lifted_params)


def param_count(params) -> int:
    """Exact number of scalar parameters."""
    return int(sum(ad.value_of(v).size for _, v in named_params(params)))


def replace_param(params, target_name: str, value):
    """Clone the tree with the named leaf swapped for ``value``."""
    found = []

    def rebuild(obj, prefix):
        if isinstance(obj, _LEAF_TYPES):
            if prefix == target_name:
                found.append(True)
                return value
            return obj
        if isinstance(obj, list):
            return [rebuild(v, f"{prefix}.{i}" if prefix else str(i)) for i, v in enumerate(obj)]
        if is_dataclass(obj):
            updates = {
                f.name: rebuild(getattr(obj, f.name), f"{prefix}.{f.name}" if prefix else f.name)
                for f in fields(obj)
                if getattr(obj, f.name) is not None and _is_param_node(getattr(obj, f.name))
            }
            return replace(obj, **updates)
        return obj

    out = rebuild(params, "")
    if not found:
        raise KeyError(f"no parameter named {target_name!r}")
    return out


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def params_to_named(params: BackboneParams) -> dict[str, np.ndarray]:
    return {name: np.asarray(ad.value_of(v)) for name, v in named_params(params)}


def save_backbone(path, params: BackboneParams, extra: dict[str, np.ndarray] | None = None) -> None:
    named = params_to_named(params)
    named["meta.channels"] = np.asarray(float(params.channels))
    named["meta.d_emb"] = np.asarray(float(params.d_emb))
    if extra:
        named.update(extra)
    write_checkpoint(path, named)


def _collect(named: dict[str, np.ndarray], prefix: str) -> dict[str, np.ndarray]:
    plen = len(prefix)
    return {k[plen:]: v for k, v in named.items() if k.startswith(prefix)}


def _conv_from(named, prefix) -> ConvParams:
    return ConvParams(weight=named[f"{prefix}.weight"], bias=named[f"{prefix}.bias"])


def _linear_from(named, prefix) -> LinearParams:
    return LinearParams(weight=named[f"{prefix}.weight"], bias=named[f"{prefix}.bias"])


def _indexed(named: dict[str, np.ndarray], prefix: str) -> int:
    idx = {int(k[len(prefix) + 1 :].split(".", 1)[0]) for k in named if k.startswith(prefix + ".")}
    return 1 + max(idx) if idx else 0


def _rfamoe_from(named, prefix, gate_mode) -> RFAMoEParams:
    n_exp = _indexed(named, f"{prefix}.experts")
    has_res = f"{prefix}.res_proj.weight" in named
    return RFAMoEParams(
        experts=[_conv_from(named, f"{prefix}.experts.{e}") for e in range(n_exp)],
        router=_linear_from(named, f"{prefix}.router"),
        in_gamma=named[f"{prefix}.in_gamma"],
        in_beta=named[f"{prefix}.in_beta"],
        gate_proj=_conv_from(named, f"{prefix}.gate_proj"),
        fuse=_conv_from(named, f"{prefix}.fuse"),
        res_proj=_conv_from(named, f"{prefix}.res_proj") if has_res else None,
        gate_mode=gate_mode,
    ).check()


def backbone_from_named(named: dict[str, np.ndarray], gate_mode: str = "unit") -> BackboneParams:
    """Rebuild parameters from checkpoint records; structure is recovered
    from record names and array shapes."""
    meta_channels = named.get("meta.channels")
    meta_d_emb = named.get("meta.d_emb")
    named = {k: v for k, v in named.items() if not k.startswith(("meta.", "opt."))}
    depth = _indexed(named, "levels")
    levels = [
        LevelParams(
            main=_rfamoe_from(named, f"levels.{i}.main", gate_mode),
            cond=_rfamoe_from(named, f"levels.{i}.cond", gate_mode),
            bridge=BridgeParams(film=_linear_from(named, f"levels.{i}.bridge.film")),
        )
        for i in range(depth)
    ]
    head = FusionMoEParams(
        experts=[
            _conv_from(named, f"head.experts.{k}")
            for k in range(_indexed(named, "head.experts"))
        ],
        router=_linear_from(named, "head.router"),
    ).check()
    lift_xt = _conv_from(named, "lift_xt")
    width = lift_xt.weight.shape[0]
    if depth:
        fuse_dim = levels[0].main.fuse.weight.shape[0]
        channels, rem = divmod(fuse_dim, width)
        if rem:
            raise ValueError(
                f"checkpoint fusion width {fuse_dim} is not a multiple of feature width {width}"
            )
        d_emb = levels[0].bridge.film.weight.shape[0]
    else:
        channels = int(meta_channels) if meta_channels is not None else 1
        d_emb = int(meta_d_emb) if meta_d_emb is not None else 2
    if meta_channels is not None:
        channels = int(meta_channels)
    return BackboneParams(
        lift_xt=lift_xt,
        lift_cond=_conv_from(named, "lift_cond"),
        levels=levels,
        head=head,
        channels=channels,
        d_emb=d_emb,
    )


def load_backbone(path, gate_mode: str = "unit") -> tuple[BackboneParams, dict[str, np.ndarray]]:
    """Read a checkpoint; returns (params, auxiliary records)."""
    named = read_checkpoint(path)
    aux = {k: v for k, v in named.items() if k.startswith(("meta.", "opt."))}
    return backbone_from_named(named, gate_mode=gate_mode), aux
