# model.py: GraphSAGE edge encoder with reverse-mode gradients
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from encoding import FEATURE_DIM, LAYOUT_TAG, FeatureConfig, StitchGraph
from errors import CheckpointError, ShapeMismatchError

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class ModelConfig(BaseModel):
    model_config = {"extra": "forbid"}

    layers: int = Field(5, ge=1, description="Number of SAGE layers L")
    hidden: int = Field(512, ge=1, description="Width of every layer but the last")
    embed_dim: int = Field(128, ge=1, description="Embedding dimension D of the last layer")
    aggregator: Literal["mean", "max", "none"] = Field("mean", description="Neighbour aggregation; 'none' zeroes it")

    def layer_dims(self) -> List[Tuple[int, int]]:
        dims = [FEATURE_DIM] + [self.hidden] * (self.layers - 1) + [self.embed_dim]
        return list(zip(dims[:-1], dims[1:]))


@dataclass
class ModelParams:
    weights: List[np.ndarray]  # W[l] has shape (out_l, 2*in_l)
    biases: List[np.ndarray]
    z: float = 1.0

    def arrays(self) -> List[np.ndarray]:
        out: List[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out + [np.array(self.z)]

    @classmethod
    def from_arrays(cls, arrays: List[np.ndarray]) -> "ModelParams":
        *wb, z = arrays
        return cls(weights=list(wb[0::2]), biases=list(wb[1::2]), z=float(z))

    def copy(self) -> "ModelParams":
        return ModelParams.from_arrays([a.copy() for a in self.arrays()])


@dataclass
class LayerCache:
    cat: np.ndarray
    pre: np.ndarray
    argmax: Optional[np.ndarray] = None


@dataclass
class ForwardCache:
    graph: StitchGraph
    aggregator: str
    layers: List[LayerCache] = field(default_factory=list)
    embeddings: Optional[np.ndarray] = None


def init_params(cfg: ModelConfig, seed: int) -> ModelParams:
    """Glorot-uniform weights, zero biases, dustbin score z = 1."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for d_in, d_out in cfg.layer_dims():
        bound = np.sqrt(6.0 / (2 * d_in + d_out))
        weights.append(rng.uniform(-bound, bound, size=(d_out, 2 * d_in)))
        biases.append(np.zeros(d_out))
    return ModelParams(weights=weights, biases=biases, z=1.0)


def _aggregate(h: np.ndarray, nb: np.ndarray, how: str) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    if how == "mean":
        return 0.5 * (h[nb[:, 0]] + h[nb[:, 1]]), None
    if how == "max":
        stacked = np.stack([h[nb[:, 0]], h[nb[:, 1]]], axis=1)  # (M, 2, d)
        arg = np.argmax(stacked, axis=1)  # first index on ties
        return np.take_along_axis(stacked, arg[:, None, :], axis=1)[:, 0, :], arg
    return np.zeros_like(h), None


def forward(graph: StitchGraph, x: np.ndarray, params: ModelParams, aggregator: str = "mean") -> Tuple[np.ndarray, ForwardCache]:
    if x.shape != (graph.node_count, FEATURE_DIM):
        raise ShapeMismatchError(f"Features have shape {x.shape}, expected ({graph.node_count}, {FEATURE_DIM})")
    first_in = params.weights[0].shape[1] // 2
    if first_in != FEATURE_DIM:
        raise ShapeMismatchError(f"First layer expects {first_in} inputs, features have {FEATURE_DIM}")

    cache = ForwardCache(graph=graph, aggregator=aggregator)
    h = np.asarray(x, dtype=np.float64)
    for w, b in zip(params.weights, params.biases):
        agg, arg = _aggregate(h, graph.neighbors, aggregator)
        cat = np.concatenate([h, agg], axis=1)
        pre = cat @ w.T + b
        cache.layers.append(LayerCache(cat=cat, pre=pre, argmax=arg))
        h = np.maximum(pre, 0.0)
    cache.embeddings = h
    return h, cache


def backward(cache: ForwardCache, grad_f: np.ndarray, params: ModelParams) -> Tuple[ModelParams, np.ndarray]:
    """Gradients of a scalar wrt every W, b (z left at 0) and wrt the input features."""
    nb = cache.graph.neighbors
    g = grad_f
    gw: List[np.ndarray] = []
    gb: List[np.ndarray] = []
    for w, lc in zip(reversed(params.weights), reversed(cache.layers)):
        gpre = g * (lc.pre > 0)
        gw.append(gpre.T @ lc.cat)
        gb.append(gpre.sum(axis=0))
        gcat = gpre @ w
        d_in = w.shape[1] // 2
        gh, gagg = gcat[:, :d_in].copy(), gcat[:, d_in:]

        if cache.aggregator == "mean":
            np.add.at(gh, nb[:, 0], 0.5 * gagg)
            np.add.at(gh, nb[:, 1], 0.5 * gagg)
        elif cache.aggregator == "max":
            src = nb[np.arange(len(nb))[:, None], lc.argmax]  # winning neighbour per feature
            cols = np.broadcast_to(np.arange(d_in), src.shape)
            np.add.at(gh, (src, cols), gagg)
        g = gh

    grads = ModelParams(weights=gw[::-1], biases=gb[::-1], z=0.0)
    return grads, g


# ---------- Checkpoints ----------
def save_checkpoint(path: Path | str, params: ModelParams, cfg: ModelConfig, features: Optional[FeatureConfig] = None, extra: Optional[Dict[str, Any]] = None) -> None:
    meta = {
        "version": CHECKPOINT_VERSION,
        "layout": LAYOUT_TAG,
        "model": cfg.model_dump(),
        "features": (features or FeatureConfig()).model_dump(),
        **(extra or {}),
    }
    tensors = {f"W{i}": w for i, w in enumerate(params.weights)}
    tensors.update({f"b{i}": b for i, b in enumerate(params.biases)})
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.array(json.dumps(meta, sort_keys=True)), z=np.array(params.z), **tensors)


def load_checkpoint(path: Path | str) -> Tuple[ModelParams, ModelConfig, FeatureConfig, Dict[str, Any]]:
    try:
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data["meta"]))
            if meta.get("version") != CHECKPOINT_VERSION:
                raise CheckpointError(f"Checkpoint {path} has version {meta.get('version')}, expected {CHECKPOINT_VERSION}")
            if meta.get("layout") != LAYOUT_TAG:
                raise CheckpointError(f"Checkpoint {path} uses feature layout '{meta.get('layout')}', expected '{LAYOUT_TAG}'")
            cfg = ModelConfig.model_validate(meta["model"])
            feats = FeatureConfig.model_validate(meta.get("features", {}))
            weights = [data[f"W{i}"] for i in range(cfg.layers)]
            biases = [data[f"b{i}"] for i in range(cfg.layers)]
            z = float(data["z"])
    except CheckpointError:
        raise
    except (OSError, KeyError, ValueError, ValidationError) as e:
        raise CheckpointError(f"Cannot read checkpoint {path}: {e}") from e

    for (d_in, d_out), w in zip(cfg.layer_dims(), weights):
        if w.shape != (d_out, 2 * d_in):
            raise CheckpointError(f"Checkpoint {path}: weight shape {w.shape} does not match config ({d_out}, {2 * d_in})")
    logger.info("Loaded checkpoint %s (L=%d, D=%d)", path, cfg.layers, cfg.embed_dim)
    return ModelParams(weights=weights, biases=biases, z=z), cfg, feats, meta
