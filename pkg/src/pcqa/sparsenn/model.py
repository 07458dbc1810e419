"""Hierarchical sparse-CNN quality regressor.

Four residual blocks of three sub-manifold conv layers (width 64), global
pooling per block, concatenation to a 256-vector and a two-layer FC head.
Residual variants A-D select the shortcut topology; the default D joins the
first layer's output into the third layer's pre-activation.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .layers import (
    LayerCache, FCCache, fc_backward, fc_forward, global_pool,
    global_pool_backward, layer_backward, layer_forward,
    relu_backward, relu_forward,
)
from .tensor import KernelMap, SparseTensor, build_kernel_map

__all__ = [
    "ModelConfig", "Model", "RESIDUAL_VARIANTS",
    "init_model", "forward", "backward", "param_count",
    "save_checkpoint", "load_checkpoint", "CheckpointError",
]

RESIDUAL_VARIANTS = ("A", "B", "C", "D")

_MAGIC = b"PCQANET\x01"
_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    blocks: int = 4
    width: int = 64
    in_channels: int = 3
    fc_hidden: int = 32
    residual: str = "D"
    pooling: str = "avg"  # avg | max
    bn_eps: float = 1e-5
    bn_momentum: float = 0.9
    voxel_size: float = 1.0

    def __post_init__(self):
        if self.residual not in RESIDUAL_VARIANTS:
            raise ValueError(f"residual variant must be one of {RESIDUAL_VARIANTS}")
        if self.blocks < 1:
            raise ValueError("need at least one block")
        if self.pooling not in ("avg", "max"):
            raise ValueError("pooling must be 'avg' or 'max'")

    @property
    def feature_length(self) -> int:
        return self.blocks * self.width


@dataclass
class Model:
    config: ModelConfig
    params: dict[str, np.ndarray]  # trainable
    state: dict[str, np.ndarray]  # batch-norm running statistics

    def layer_view(self, b: int, l: int) -> dict:
        p, s = self.params, self.state
        return {
            "w": p[f"conv{b}.{l}.w"],
            "gamma": p[f"conv{b}.{l}.gamma"],
            "beta": p[f"conv{b}.{l}.beta"],
            "running_mean": s[f"conv{b}.{l}.running_mean"],
            "running_var": s[f"conv{b}.{l}.running_var"],
        }


def init_model(config: ModelConfig, seed: int = 0) -> Model:
    """He-style initialization from a counter-based stream."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    params: dict[str, np.ndarray] = {}
    state: dict[str, np.ndarray] = {}
    w = config.width
    for b in range(config.blocks):
        for l in range(3):
            cin = config.in_channels if (b == 0 and l == 0) else w
            params[f"conv{b}.{l}.w"] = rng.normal(0.0, np.sqrt(2.0 / (27 * cin)), (27, cin, w))
            params[f"conv{b}.{l}.gamma"] = np.ones(w)
            params[f"conv{b}.{l}.beta"] = np.zeros(w)
            state[f"conv{b}.{l}.running_mean"] = np.zeros(w)
            state[f"conv{b}.{l}.running_var"] = np.ones(w)
    s_len = config.feature_length
    params["fc1.w"] = rng.normal(0.0, np.sqrt(2.0 / s_len), (s_len, config.fc_hidden))
    params["fc1.b"] = np.zeros(config.fc_hidden)
    params["fc2.w"] = rng.normal(0.0, np.sqrt(1.0 / config.fc_hidden), (config.fc_hidden, 1))
    params["fc2.b"] = np.zeros(1)
    return Model(config=config, params=params, state=state)


def param_count(model: Model) -> int:
    return sum(int(np.prod(a.shape)) for a in model.params.values())


def _block_plan(variant: str, b: int) -> str:
    if variant == "A":
        return "plain"
    if variant == "D":
        return "span23"
    # B and C need matching widths on the shortcut: the first block's input
    # is 3-wide, so it falls back to the 2,3-layer span
    if b == 0:
        return "span23"
    return "span12" if variant == "B" else "span13"


@dataclass
class BlockCache:
    plan: str
    layers: list[LayerCache]
    join_mask: np.ndarray | None


@dataclass
class ModelCache:
    kmap: KernelMap
    n_rows: int
    blocks: list[BlockCache]
    pool_args: list[np.ndarray | None]
    fc: FCCache


def _block_forward(
    model: Model, b: int, x: np.ndarray, kmap: KernelMap,
    training: bool, update_stats: bool,
) -> tuple[np.ndarray, BlockCache]:
    cfg = model.config
    plan = _block_plan(cfg.residual, b)
    kw = dict(training=training, momentum=cfg.bn_momentum, eps=cfg.bn_eps,
              update_stats=update_stats)
    p1, p2, p3 = (model.layer_view(b, l) for l in range(3))
    if plan == "plain":
        h1, c1 = layer_forward(p1, x, kmap, activate=True, **kw)
        h2, c2 = layer_forward(p2, h1, kmap, activate=True, **kw)
        h3, c3 = layer_forward(p3, h2, kmap, activate=True, **kw)
        return h3, BlockCache(plan, [c1, c2, c3], None)
    if plan == "span23":
        h1, c1 = layer_forward(p1, x, kmap, activate=True, **kw)
        h2, c2 = layer_forward(p2, h1, kmap, activate=True, **kw)
        z3, c3 = layer_forward(p3, h2, kmap, activate=False, **kw)
        out, mask = relu_forward(z3 + h1)
        return out, BlockCache(plan, [c1, c2, c3], mask)
    if plan == "span12":
        h1, c1 = layer_forward(p1, x, kmap, activate=True, **kw)
        z2, c2 = layer_forward(p2, h1, kmap, activate=False, **kw)
        h2, mask = relu_forward(z2 + x)
        h3, c3 = layer_forward(p3, h2, kmap, activate=True, **kw)
        return h3, BlockCache(plan, [c1, c2, c3], mask)
    # span13
    h1, c1 = layer_forward(p1, x, kmap, activate=True, **kw)
    h2, c2 = layer_forward(p2, h1, kmap, activate=True, **kw)
    z3, c3 = layer_forward(p3, h2, kmap, activate=False, **kw)
    out, mask = relu_forward(z3 + x)
    return out, BlockCache(plan, [c1, c2, c3], mask)


def _block_backward(
    model: Model, b: int, dout: np.ndarray, cache: BlockCache, kmap: KernelMap,
) -> tuple[np.ndarray, dict]:
    p1, p2, p3 = (model.layer_view(b, l) for l in range(3))
    c1, c2, c3 = cache.layers
    grads: dict[str, np.ndarray] = {}

    def store(l: int, g: dict):
        for name, arr in g.items():
            grads[f"conv{b}.{l}.{name}"] = arr

    if cache.plan == "plain":
        dh2, g3 = layer_backward(p3, dout, c3, kmap)
        dh1, g2 = layer_backward(p2, dh2, c2, kmap)
        dx, g1 = layer_backward(p1, dh1, c1, kmap)
    elif cache.plan == "span23":
        dpre = relu_backward(dout, cache.join_mask)
        dh2, g3 = layer_backward(p3, dpre, c3, kmap)
        dh1, g2 = layer_backward(p2, dh2, c2, kmap)
        dh1 = dh1 + dpre
        dx, g1 = layer_backward(p1, dh1, c1, kmap)
    elif cache.plan == "span12":
        dh2, g3 = layer_backward(p3, dout, c3, kmap)
        dpre = relu_backward(dh2, cache.join_mask)
        dh1, g2 = layer_backward(p2, dpre, c2, kmap)
        dx, g1 = layer_backward(p1, dh1, c1, kmap)
        dx = dx + dpre
    else:  # span13
        dpre = relu_backward(dout, cache.join_mask)
        dh2, g3 = layer_backward(p3, dpre, c3, kmap)
        dh1, g2 = layer_backward(p2, dh2, c2, kmap)
        dx, g1 = layer_backward(p1, dh1, c1, kmap)
        dx = dx + dpre
    store(2, g3)
    store(1, g2)
    store(0, g1)
    return dx, grads


def forward(
    model: Model,
    tensor: SparseTensor,
    training: bool = False,
    update_stats: bool = True,
    return_cache: bool = False,
    kmap: KernelMap | None = None,
) -> tuple[float, ModelCache | None]:
    """Predicted quality score for one sparse tensor; unbounded scalar.

    A prebuilt kernel map may be passed when evaluating repeatedly on the
    same coordinate set (the map depends only on the coordinates).
    """
    cfg = model.config
    if tensor.n_channels != cfg.in_channels:
        raise ValueError(
            f"tensor has {tensor.n_channels} channels, model expects {cfg.in_channels}")
    if kmap is None:
        kmap = build_kernel_map(tensor)
    x = tensor.feats
    block_caches: list[BlockCache] = []
    pool_args: list[np.ndarray | None] = []
    pooled: list[np.ndarray] = []
    for b in range(cfg.blocks):
        x, bc = _block_forward(model, b, x, kmap, training, update_stats)
        vec, arg = global_pool(x, cfg.pooling)
        block_caches.append(bc)
        pool_args.append(arg)
        pooled.append(vec)
    s = np.concatenate(pooled)
    q, fc_cache = fc_forward(model.params, s)
    if not return_cache:
        return q, None
    return q, ModelCache(kmap=kmap, n_rows=len(tensor), blocks=block_caches,
                         pool_args=pool_args, fc=fc_cache)


def backward(model: Model, cache: ModelCache, dq: float) -> dict[str, np.ndarray]:
    """Gradients of dq * q w.r.t. every trainable parameter."""
    cfg = model.config
    ds, grads = fc_backward(model.params, dq, cache.fc)
    w = cfg.width
    d_next: np.ndarray | None = None
    for b in range(cfg.blocks - 1, -1, -1):
        dvec = ds[b * w:(b + 1) * w]
        dout = global_pool_backward(dvec, cache.n_rows, cfg.pooling, cache.pool_args[b])
        if d_next is not None:
            dout = dout + d_next
        d_next, bgrads = _block_backward(model, b, dout, cache.blocks[b], cache.kmap)
        grads.update(bgrads)
    return grads


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(model: Model, path: str | Path) -> None:
    """Versioned binary: magic, config header, parameter and running-stat blobs."""
    names = sorted(model.params) + sorted(model.state)
    manifest = []
    blobs = []
    for name in names:
        arr = model.params.get(name)
        if arr is None:
            arr = model.state[name]
        manifest.append([name, list(arr.shape)])
        blobs.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    header = json.dumps(
        {"config": dataclasses.asdict(model.config), "arrays": manifest},
        sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<II", _VERSION, len(header)))
        f.write(header)
        for blob in blobs:
            f.write(blob)


def load_checkpoint(path: str | Path) -> Model:
    with open(path, "rb") as f:
        magic = f.read(len(_MAGIC))
        if magic != _MAGIC:
            raise CheckpointError("bad checkpoint magic")
        version, header_len = struct.unpack("<II", f.read(8))
        if version != _VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        header = json.loads(f.read(header_len).decode("utf-8"))
        config = ModelConfig(**header["config"])
        fresh = init_model(config, seed=0)
        params: dict[str, np.ndarray] = {}
        state: dict[str, np.ndarray] = {}
        for name, shape in header["arrays"]:
            count = int(np.prod(shape)) if shape else 1
            raw = f.read(count * 8)
            if len(raw) != count * 8:
                raise CheckpointError("truncated checkpoint blob")
            arr = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
            if name in fresh.params:
                params[name] = arr
            elif name in fresh.state:
                state[name] = arr
            else:
                raise CheckpointError(f"unexpected array '{name}' in checkpoint")
    missing = (set(fresh.params) - set(params)) | (set(fresh.state) - set(state))
    if missing:
        raise CheckpointError(f"checkpoint missing arrays: {sorted(missing)[:3]}")
    return Model(config=config, params=params, state=state)
