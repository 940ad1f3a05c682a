# learning.py: loss, optimiser, training loop, inference and metrics
from __future__ import annotations

import json
import logging
import time
import warnings
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Hashable, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np
from pydantic import BaseModel, Field

from assignment import (
    HardAssignment,
    SinkhornConfig,
    augment_dustbin,
    cost_backward,
    hard_assign,
    score_matrix,
    sinkhorn_backward,
    sinkhorn_log,
    symmetrize,
)
from encoding import EncodedPattern, FeatureConfig, encode_pattern
from errors import CheckpointError, DatasetError, EmptyEvaluationWarning, ShapeMismatchError
from model import ModelConfig, ModelParams, backward, forward, init_params
from pattern_io import EdgeRef, Pattern, StitchPair

logger = logging.getLogger(__name__)

Pair = Tuple[Hashable, Hashable]


class TrainConfig(BaseModel):
    model_config = {"extra": "forbid"}

    lr: float = Field(1e-3, gt=0.0, description="Adam learning rate")
    epochs: int = Field(18, ge=1)
    seed: int = Field(0, description="Seeds initialisation and per-epoch shuffling")
    normalize_loss: bool = Field(True, description="Divide the loss by the number of supervised entries")


# ---------- Loss ----------
def supervised_entries(m: int, pairs: Iterable[Tuple[int, int]], unmatched: Iterable[int]) -> List[Tuple[int, int]]:
    entries: List[Tuple[int, int]] = []
    for i, j in sorted(pairs):
        if not (0 <= i < m and 0 <= j < m):
            raise ShapeMismatchError(f"Ground-truth pair ({i}, {j}) outside 0..{m - 1}")
        entries += [(i, j), (j, i)]
    for i in sorted(unmatched):
        if not 0 <= i < m:
            raise ShapeMismatchError(f"Ground-truth unmatched node {i} outside 0..{m - 1}")
        entries += [(i, m), (m, i)]
    return entries


def nll_loss(log_p: np.ndarray, pairs: Iterable[Tuple[int, int]], unmatched: Iterable[int], normalize: bool = True) -> Tuple[float, np.ndarray]:
    """Negative log-likelihood of the ground-truth entries and its gradient wrt log P̄."""
    m = log_p.shape[0] - 1
    entries = supervised_entries(m, pairs, unmatched)
    grad = np.zeros_like(log_p)
    if not entries:
        return 0.0, grad
    scale = 1.0 / len(entries) if normalize else 1.0
    rows, cols = zip(*entries)
    loss = -float(log_p[rows, cols].sum()) * scale
    np.add.at(grad, (np.array(rows), np.array(cols)), -scale)
    return loss, grad


# ---------- Optimiser ----------
@dataclass
class AdamState:
    m: List[np.ndarray]
    v: List[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "AdamState":
        arrays = params.arrays()
        return cls(m=[np.zeros_like(a) for a in arrays], v=[np.zeros_like(a) for a in arrays])


def adam_update(params: ModelParams, grads: ModelParams, state: AdamState, lr: float) -> ModelParams:
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    out = []
    for k, (p, g) in enumerate(zip(params.arrays(), grads.arrays())):
        state.m[k] = b1 * state.m[k] + (1 - b1) * g
        state.v[k] = b2 * state.v[k] + (1 - b2) * g * g
        m_hat = state.m[k] / (1 - b1**state.step)
        v_hat = state.v[k] / (1 - b2**state.step)
        out.append(p - lr * m_hat / (np.sqrt(v_hat) + state.eps))
    return ModelParams.from_arrays(out)


# ---------- Forward / backward over one garment ----------
def loss_and_grads(
    enc: EncodedPattern,
    params: ModelParams,
    model_cfg: ModelConfig,
    sk_cfg: SinkhornConfig,
    normalize: bool = True,
) -> Tuple[float, ModelParams]:
    f, cache = forward(enc.graph, enc.features, params, model_cfg.aggregator)
    c_bar = augment_dustbin(score_matrix(f), params.z)
    res = sinkhorn_log(c_bar, sk_cfg)
    loss, g_log_p = nll_loss(res.log_p, enc.gt_pairs, enc.gt_unmatched, normalize)

    g_c_bar = sinkhorn_backward(c_bar, res, g_log_p)
    g_f, g_z = cost_backward(f, g_c_bar)
    grads, _ = backward(cache, g_f, params)
    grads.z = g_z
    return loss, grads


def train_step(
    enc: EncodedPattern,
    params: ModelParams,
    opt: AdamState,
    train_cfg: TrainConfig,
    model_cfg: ModelConfig,
    sk_cfg: SinkhornConfig,
) -> Tuple[ModelParams, AdamState, float]:
    loss, grads = loss_and_grads(enc, params, model_cfg, sk_cfg, train_cfg.normalize_loss)
    return adam_update(params, grads, opt, train_cfg.lr), opt, loss


# ---------- Inference ----------
def predict_encoded(enc: EncodedPattern, params: ModelParams, model_cfg: ModelConfig, sk_cfg: SinkhornConfig) -> Tuple[HardAssignment, np.ndarray]:
    f, _ = forward(enc.graph, enc.features, params, model_cfg.aggregator)
    res = sinkhorn_log(augment_dustbin(score_matrix(f), params.z), sk_cfg)
    p_sym = symmetrize(res.prob)
    return hard_assign(p_sym, sk_cfg), p_sym


@dataclass
class Prediction:
    pattern: Pattern  # input geometry with predicted stitches, caller's addressing
    unstitched: List[EdgeRef]
    scores: np.ndarray  # symmetrised P′ in canonical node order
    node_refs: List[EdgeRef]


def predict_pattern(
    p: Pattern,
    params: ModelParams,
    model_cfg: ModelConfig,
    sk_cfg: SinkhornConfig,
    feature_cfg: Optional[FeatureConfig] = None,
) -> Prediction:
    enc = encode_pattern(p, feature_cfg)
    hard, p_sym = predict_encoded(enc, params, model_cfg, sk_cfg)
    refs = enc.prepared.source_refs
    stitches = sorted(StitchPair.of(refs[i], refs[j]) for i, j in hard.pairs)
    logger.info("Predicted %d stitches for '%s' (%d unstitched edges)", len(stitches), p.name, len(hard.unstitched))
    return Prediction(
        pattern=p.model_copy(update={"stitches": stitches}),
        unstitched=sorted(refs[i] for i in hard.unstitched),
        scores=p_sym,
        node_refs=list(refs),
    )


# ---------- Metrics ----------
def _ratio(num: int, den: int, empty: float) -> float:
    return num / den if den else empty


def _f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def _precision(hits: int, n_pred: int, n_gt: int) -> float:
    if n_pred:
        return hits / n_pred
    return 1.0 if n_gt == 0 else 0.0


def pair_metrics(pred: Set[Pair], gt: Set[Pair]) -> Tuple[float, float, float]:
    hits = len(pred & gt)
    p, r = _precision(hits, len(pred), len(gt)), _ratio(hits, len(gt), 1.0)
    return p, r, _f1(p, r)


def multi_pairs(pairs: Set[Pair]) -> Set[Pair]:
    """Pairs touching an edge that takes part in two or more pairs."""
    uses = Counter(x for pair in pairs for x in pair)
    return {pair for pair in pairs if uses[pair[0]] >= 2 or uses[pair[1]] >= 2}


def multiedge_metrics(pred: Set[Pair], gt: Set[Pair]) -> Tuple[float, float, float]:
    pm, gm = multi_pairs(pred), multi_pairs(gt)
    hits = len(pm & gm)
    # empty predicted set is vacuously precise
    p, r = _ratio(hits, len(pm), 1.0), _ratio(hits, len(gm), 1.0)
    return p, r, _f1(p, r)


def gsp(per_pattern: Sequence[Tuple[Set[Pair], Set[Pair]]]) -> float:
    if not per_pattern:
        warnings.warn("garment success rate of an empty evaluation set", EmptyEvaluationWarning, stacklevel=2)
        return 0.0
    return sum(1 for pred, gt in per_pattern if pred == gt) / len(per_pattern)


class PatternScore(BaseModel):
    model_config = {"extra": "forbid"}

    name: str
    tp: float
    tr: float
    tf1: float
    exact: bool


class EvalReport(BaseModel):
    model_config = {"extra": "forbid"}

    tp: float = Field(..., description="Total precision over all pairs")
    tr: float = Field(..., description="Total recall over all pairs")
    tf1: float
    mep: float = Field(..., description="Multi-edge precision")
    mer: float = Field(..., description="Multi-edge recall")
    mef1: float
    gsp: float = Field(..., description="Fraction of patterns predicted exactly")
    patterns: List[PatternScore] = Field(default_factory=list)
    # wall-clock, so kept out of the serialised report
    inference_seconds: Optional[float] = Field(None, exclude=True, description="Mean prediction time per pattern")

    def table(self) -> str:
        rows = [("TP", self.tp), ("TR", self.tr), ("TF1", self.tf1), ("MEP", self.mep), ("MER", self.mer), ("MEF1", self.mef1), ("GSP", self.gsp)]
        lines = [f"{k:<5}{v:8.4f}" for k, v in rows]
        if self.inference_seconds is not None:
            lines.append(f"time {self.inference_seconds * 1e3:8.2f} ms/pattern")
        return "\n".join(lines)


def evaluate(results: Sequence[Tuple[str, Set[Pair], Set[Pair]]]) -> EvalReport:
    """Micro-averaged report over (name, predicted pairs, ground-truth pairs)."""
    hits = n_pred = n_gt = 0
    m_hits = m_pred = m_gt = 0
    per: List[PatternScore] = []
    for name, pred, gt in results:
        hits += len(pred & gt)
        n_pred += len(pred)
        n_gt += len(gt)
        pm, gm = multi_pairs(pred), multi_pairs(gt)
        m_hits += len(pm & gm)
        m_pred += len(pm)
        m_gt += len(gm)
        p, r, f = pair_metrics(pred, gt)
        per.append(PatternScore(name=name, tp=p, tr=r, tf1=f, exact=pred == gt))

    tp, tr = _precision(hits, n_pred, n_gt), _ratio(hits, n_gt, 1.0)
    mep, mer = _ratio(m_hits, m_pred, 1.0), _ratio(m_hits, m_gt, 1.0)
    return EvalReport(
        tp=tp, tr=tr, tf1=_f1(tp, tr),
        mep=mep, mer=mer, mef1=_f1(mep, mer),
        gsp=gsp([(pred, gt) for _, pred, gt in results]),
        patterns=per,
    )


def stitch_set(p: Pattern) -> Set[Pair]:
    return {(s.a.key(), s.b.key()) for s in p.stitches}


# ---------- Training loop ----------
class EpochRecord(BaseModel):
    model_config = {"extra": "forbid"}

    epoch: int
    train_loss: float
    val_tf1: float
    val_gsp: float


@dataclass
class TrainingState:
    params: ModelParams
    opt: AdamState
    epoch: int = 0  # next epoch to run
    history: List[EpochRecord] = field(default_factory=list)
    best_params: Optional[ModelParams] = None
    best_tf1: float = -1.0

    def save(self, path: Path | str) -> None:
        arrays: Dict[str, np.ndarray] = {}
        for k, a in enumerate(self.params.arrays()):
            arrays[f"p{k}"] = a
            arrays[f"m{k}"] = self.opt.m[k]
            arrays[f"v{k}"] = self.opt.v[k]
        best = self.best_params or self.params
        for k, a in enumerate(best.arrays()):
            arrays[f"best{k}"] = a
        meta = {
            "epoch": self.epoch,
            "step": self.opt.step,
            "best_tf1": self.best_tf1,
            "n_arrays": len(self.params.arrays()),
            "history": [r.model_dump() for r in self.history],
        }
        with open(path, "wb") as fh:
            np.savez(fh, meta=np.array(json.dumps(meta, sort_keys=True)), **arrays)

    @classmethod
    def load(cls, path: Path | str) -> "TrainingState":
        try:
            with np.load(path, allow_pickle=False) as data:
                meta = json.loads(str(data["meta"]))
                n = meta["n_arrays"]
                params = ModelParams.from_arrays([data[f"p{k}"] for k in range(n)])
                opt = AdamState(m=[data[f"m{k}"] for k in range(n)], v=[data[f"v{k}"] for k in range(n)], step=meta["step"])
                best = ModelParams.from_arrays([data[f"best{k}"] for k in range(n)])
        except (OSError, KeyError, ValueError) as e:
            raise CheckpointError(f"Cannot read training state {path}: {e}") from e
        return cls(
            params=params,
            opt=opt,
            epoch=meta["epoch"],
            history=[EpochRecord.model_validate(r) for r in meta["history"]],
            best_params=best,
            best_tf1=meta["best_tf1"],
        )


def evaluate_encoded(encoded: Sequence[EncodedPattern], params: ModelParams, model_cfg: ModelConfig, sk_cfg: SinkhornConfig) -> EvalReport:
    results = []
    started = time.perf_counter()
    for enc in encoded:
        hard, _ = predict_encoded(enc, params, model_cfg, sk_cfg)
        results.append((enc.prepared.pattern.name, set(hard.pairs), set(enc.gt_pairs)))
    elapsed = time.perf_counter() - started
    report = evaluate(results)
    if encoded:
        report.inference_seconds = elapsed / len(encoded)
        logger.info("Inference took %.2f ms per pattern (T=%d)", report.inference_seconds * 1e3, sk_cfg.iterations)
    return report


def fit(
    train: Sequence[Pattern],
    val: Sequence[Pattern],
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    sk_cfg: SinkhornConfig,
    feature_cfg: Optional[FeatureConfig] = None,
    state: Optional[TrainingState] = None,
    state_path: Optional[Path | str] = None,
    on_epoch: Optional[Callable[[EpochRecord], None]] = None,
) -> TrainingState:
    """Train one garment per step; keep the params with the best validation TF1."""
    if not train:
        raise DatasetError("Training set is empty")
    enc_train = [encode_pattern(p, feature_cfg) for p in train]
    enc_val = [encode_pattern(p, feature_cfg) for p in val] or enc_train

    if state is None:
        params = init_params(model_cfg, train_cfg.seed)
        state = TrainingState(params=params, opt=AdamState.zeros_like(params))
    elif state.epoch:
        logger.warning("Resuming training at epoch %d", state.epoch)

    while state.epoch < train_cfg.epochs:
        order = np.random.default_rng([train_cfg.seed, state.epoch]).permutation(len(enc_train))
        losses = []
        for idx in order:
            state.params, state.opt, loss = train_step(enc_train[idx], state.params, state.opt, train_cfg, model_cfg, sk_cfg)
            losses.append(loss)

        report = evaluate_encoded(enc_val, state.params, model_cfg, sk_cfg)
        record = EpochRecord(epoch=state.epoch, train_loss=float(np.mean(losses)), val_tf1=report.tf1, val_gsp=report.gsp)
        state.history.append(record)
        if report.tf1 > state.best_tf1:
            state.best_tf1 = report.tf1
            state.best_params = state.params.copy()
        state.epoch += 1
        logger.info("epoch %d  loss %.4f  val TF1 %.4f  val GSP %.4f", record.epoch, record.train_loss, record.val_tf1, record.val_gsp)

        if state_path is not None:
            state.save(state_path)
        if on_epoch is not None:
            on_epoch(record)
    return state


def history_table(history: Sequence[EpochRecord]) -> str:
    lines = [f"{'epoch':>5} {'train_loss':>12} {'val_tf1':>8} {'val_gsp':>8}"]
    lines += [f"{r.epoch:>5} {r.train_loss:>12.6f} {r.val_tf1:>8.4f} {r.val_gsp:>8.4f}" for r in history]
    return "\n".join(lines) + "\n"
