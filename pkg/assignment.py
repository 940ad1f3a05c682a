# assignment.py: differentiable partial assignment over stitch-graph nodes
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Set, Tuple

import numpy as np
from pydantic import BaseModel, Field
from scipy.special import logsumexp

from errors import NumericalError, ShapeMismatchError

logger = logging.getLogger(__name__)

SELF_MATCH_SENTINEL = -1e9


class SinkhornConfig(BaseModel):
    model_config = {"extra": "forbid"}

    iterations: int = Field(100, ge=1, description="Number of row/column normalisation rounds T")
    tau_multi: float = Field(0.4, gt=0.0, le=1.0, description="Extra-match probability threshold")


@dataclass
class SinkhornResult:
    log_p: np.ndarray  # (M+1, M+1)
    log_a: np.ndarray
    log_b: np.ndarray
    us: List[np.ndarray] = field(default_factory=list)  # u^0..u^T
    vs: List[np.ndarray] = field(default_factory=list)  # v^0..v^T

    @property
    def prob(self) -> np.ndarray:
        return np.exp(self.log_p)


@dataclass
class HardAssignment:
    pairs: Set[Tuple[int, int]]  # (i, j) with i < j
    unstitched: Set[int]


# ---------- Scores ----------
def score_matrix(f: np.ndarray) -> np.ndarray:
    if f.ndim != 2 or f.shape[0] < 2:
        raise ShapeMismatchError(f"Need at least two embeddings, got shape {f.shape}")
    c = f @ f.T
    np.fill_diagonal(c, SELF_MATCH_SENTINEL)
    return c


def augment_dustbin(c: np.ndarray, z: float) -> np.ndarray:
    m = c.shape[0]
    out = np.full((m + 1, m + 1), float(z))
    out[:m, :m] = c
    return out


def marginals(m: int) -> Tuple[np.ndarray, np.ndarray]:
    """Log marginals: mass 1 per real node, mass M on the dustbin."""
    log_a = np.zeros(m + 1)
    log_a[m] = np.log(m)
    return log_a, log_a.copy()


# ---------- Solver ----------
def sinkhorn_log(c_bar: np.ndarray, cfg: SinkhornConfig) -> SinkhornResult:
    m = c_bar.shape[0] - 1
    log_a, log_b = marginals(m)
    u, v = np.zeros(m + 1), np.zeros(m + 1)
    res = SinkhornResult(log_p=c_bar, log_a=log_a, log_b=log_b, us=[u], vs=[v])

    for _ in range(cfg.iterations):
        u = log_a - logsumexp(c_bar + v[None, :], axis=1)
        v = log_b - logsumexp(c_bar + u[:, None], axis=0)
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise NumericalError("Sinkhorn potentials became non-finite; scores are pathological")
        res.us.append(u)
        res.vs.append(v)

    res.log_p = c_bar + u[:, None] + v[None, :]
    if logger.isEnabledFor(logging.DEBUG):
        p = res.prob
        err = max(np.abs(p.sum(1) - np.exp(log_a)).max(), np.abs(p.sum(0) - np.exp(log_b)).max())
        logger.debug("Sinkhorn M=%d T=%d marginal error %.3e", m, cfg.iterations, err)
    return res


def sinkhorn_backward(c_bar: np.ndarray, res: SinkhornResult, grad_log_p: np.ndarray) -> np.ndarray:
    """Gradient wrt c_bar of a scalar with gradient ``grad_log_p`` wrt log P̄.

    Unrolls every iteration in reverse.
    """
    g_c = grad_log_p.copy()
    g_u = grad_log_p.sum(axis=1)
    g_v = grad_log_p.sum(axis=0)
    for t in range(len(res.us) - 1, 0, -1):
        u_t, v_t, v_prev = res.us[t], res.vs[t], res.vs[t - 1]
        # v^t = log b − lse_i(C + u^t)
        q = np.exp(c_bar + u_t[:, None] + v_t[None, :] - res.log_b[None, :])
        qg = q * g_v[None, :]
        g_c -= qg
        g_u = g_u - qg.sum(axis=1)
        # u^t = log a − lse_j(C + v^{t-1})
        r = np.exp(c_bar + u_t[:, None] + v_prev[None, :] - res.log_a[:, None])
        rg = r * g_u[:, None]
        g_c -= rg
        g_v = -rg.sum(axis=0)
        g_u = np.zeros_like(g_u)
    return g_c


def cost_backward(f: np.ndarray, g_c_bar: np.ndarray) -> Tuple[np.ndarray, float]:
    """Push a gradient wrt the extended cost back to the embeddings and z."""
    m = f.shape[0]
    g = g_c_bar[:m, :m].copy()
    np.fill_diagonal(g, 0.0)
    g_f = (g + g.T) @ f
    g_z = float(g_c_bar[m, :].sum() + g_c_bar[:m, m].sum())
    return g_f, g_z


# ---------- Decoding ----------
def symmetrize(p: np.ndarray) -> np.ndarray:
    return 0.5 * (p + p.T)


def hard_assign(p_sym: np.ndarray, cfg: SinkhornConfig) -> HardAssignment:
    m = p_sym.shape[0] - 1
    pairs: Set[Tuple[int, int]] = set()
    for i in range(m):
        row = p_sym[i].copy()
        row[i] = -np.inf
        best = int(np.argmax(row))
        if best == m:
            continue
        pairs.add((min(i, best), max(i, best)))
        for j in np.flatnonzero(row[:m] >= cfg.tau_multi):
            pairs.add((min(i, int(j)), max(i, int(j))))
    touched = {i for pair in pairs for i in pair}
    return HardAssignment(pairs=pairs, unstitched=set(range(m)) - touched)
