"""Joint embedding of a graph pair with cross-graph attention.

Forward pass, for each graph of the pair:

1. encode normalized node features through a two-layer map -> h0;
2. for each of T rounds, every node receives (a) the sum of messages
   MLP_msg([h_receiver, h_sender]) over incoming edges of the symmetrized
   edge set and (b) a cross-graph term mu_i = h_i - sum_j a_ij h_j where
   a_ij softmax-normalizes the dot products h_i . h_j against the *other*
   graph's nodes; the node state becomes MLP_upd([h, messages, mu]);
3. readout: e = W_out ( sum_i sigmoid(gate(h_i)) * transform(h_i) ) + b_out.

Because of step 2b an embedding depends on both graphs of the pair, so
every similarity evaluation is one joint forward pass.

The backward pass is derived by hand (reverse order of the above, caches
kept per round) and is validated against central finite differences by
gradcheck.  Hidden activations are tanh throughout, keeping the loss
smooth everywhere except the hinge itself.

Both passes canonicalize the argument order by serialized graph bytes, so
``embed_pair(a, b)`` equals ``embed_pair(b, a)`` swapped, bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..callgraph import CallGraph, FeatureStats, normalize_matrix, serialize_graph
from ..errors import NumericError
from .config import LOSS_AS_WRITTEN, LOSS_REINTERPRETED
from .params import GmnParams, zero_like

__all__ = ["embed_pair", "cosine_similarity", "pair_loss", "pair_gradients"]


@dataclass
class _GraphArrays:
    x: np.ndarray  # (n, 12) normalized features
    src: np.ndarray  # (n_sym_edges,) message sender positions
    dst: np.ndarray  # (n_sym_edges,) message receiver positions


def _prepare(graph: CallGraph, stats: FeatureStats) -> _GraphArrays:
    if len(graph) == 0:
        raise NumericError(f"{graph.meta.sample_id}: cannot embed an empty graph")
    pos = {node_id: i for i, node_id in enumerate(graph.node_ids())}
    sym = set()
    for a, b in graph.edges:
        sym.add((pos[a], pos[b]))
        sym.add((pos[b], pos[a]))
    ordered = sorted(sym)
    src = np.array([s for s, _ in ordered], dtype=np.intp)
    dst = np.array([d for _, d in ordered], dtype=np.intp)
    return _GraphArrays(normalize_matrix(graph, stats), src, dst)


def _mlp2(x: np.ndarray, p: GmnParams, prefix: str) -> tuple[np.ndarray, np.ndarray]:
    a = p.arrays
    z = np.tanh(x @ a[f"{prefix}_w1"] + a[f"{prefix}_b1"])
    return z @ a[f"{prefix}_w2"] + a[f"{prefix}_b2"], z


def _mlp2_backward(
    dout: np.ndarray,
    x: np.ndarray,
    z: np.ndarray,
    p: GmnParams,
    prefix: str,
    grads: dict[str, np.ndarray],
) -> np.ndarray:
    a = p.arrays
    grads[f"{prefix}_w2"] += z.T @ dout
    grads[f"{prefix}_b2"] += dout.sum(axis=0)
    da = (dout @ a[f"{prefix}_w2"].T) * (1.0 - z * z)
    grads[f"{prefix}_w1"] += x.T @ da
    grads[f"{prefix}_b1"] += da.sum(axis=0)
    return da @ a[f"{prefix}_w1"].T


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    # fixed memory layout keeps the reduction path identical for a matrix
    # and its transposed view, which the exact pair-swap symmetry needs
    logits = np.ascontiguousarray(logits)
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _check_finite(arr: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite value at {where}")


@dataclass
class _RoundCache:
    ha: np.ndarray
    hb: np.ndarray
    pa: np.ndarray
    pb: np.ndarray
    msg_a: tuple[np.ndarray, np.ndarray] | None  # (m_in, tanh hidden)
    msg_b: tuple[np.ndarray, np.ndarray] | None
    u_a: tuple[np.ndarray, np.ndarray]  # (u_in, tanh hidden)
    u_b: tuple[np.ndarray, np.ndarray]


@dataclass
class _AggCache:
    h: np.ndarray
    gate: np.ndarray
    trans: np.ndarray
    z: np.ndarray


@dataclass
class _PairCache:
    ga: _GraphArrays
    gb: _GraphArrays
    rounds: list[_RoundCache]
    agg_a: _AggCache
    agg_b: _AggCache
    enc_a: tuple[np.ndarray, np.ndarray]
    enc_b: tuple[np.ndarray, np.ndarray]


def _message_sum(
    h: np.ndarray, ga: _GraphArrays, p: GmnParams
) -> tuple[np.ndarray, tuple[np.ndarray, np.ndarray] | None]:
    m_dim = p.config.message_dim
    if ga.src.size == 0:
        return np.zeros((h.shape[0], m_dim)), None
    m_in = np.concatenate([h[ga.dst], h[ga.src]], axis=1)  # receiver first
    m_out, mz = _mlp2(m_in, p, "msg")
    msg = np.zeros((h.shape[0], m_dim))
    np.add.at(msg, ga.dst, m_out)
    return msg, (m_in, mz)


def _aggregate(h: np.ndarray, p: GmnParams) -> tuple[np.ndarray, _AggCache]:
    a = p.arrays
    gate = _sigmoid(h @ a["gate_w"] + a["gate_b"])
    trans = h @ a["trans_w"] + a["trans_b"]
    z = (gate * trans).sum(axis=0)
    return z @ a["out_w"] + a["out_b"], _AggCache(h, gate, trans, z)


def _forward(ga: _GraphArrays, gb: _GraphArrays, p: GmnParams) -> tuple[np.ndarray, np.ndarray, _PairCache]:
    ha, za = _mlp2(ga.x, p, "enc")
    hb, zb = _mlp2(gb.x, p, "enc")
    _check_finite(ha, "encoder output")
    rounds: list[_RoundCache] = []
    for t in range(p.config.propagation_rounds):
        msg_a, mc_a = _message_sum(ha, ga, p)
        msg_b, mc_b = _message_sum(hb, gb, p)
        logits = ha @ hb.T
        pa = _softmax_rows(logits)
        pb = _softmax_rows(logits.T)
        mu_a = ha - pa @ hb
        mu_b = hb - pb @ ha
        ua_in = np.concatenate([ha, msg_a, mu_a], axis=1)
        ub_in = np.concatenate([hb, msg_b, mu_b], axis=1)
        ha_new, uza = _mlp2(ua_in, p, "upd")
        hb_new, uzb = _mlp2(ub_in, p, "upd")
        _check_finite(ha_new, f"propagation round {t + 1}")
        _check_finite(hb_new, f"propagation round {t + 1}")
        rounds.append(_RoundCache(ha, hb, pa, pb, mc_a, mc_b, (ua_in, uza), (ub_in, uzb)))
        ha, hb = ha_new, hb_new
    ea, agg_a = _aggregate(ha, p)
    eb, agg_b = _aggregate(hb, p)
    _check_finite(ea, "readout")
    _check_finite(eb, "readout")
    return ea, eb, _PairCache(ga, gb, rounds, agg_a, agg_b, (ga.x, za), (gb.x, zb))


def _aggregate_backward(de: np.ndarray, c: _AggCache, p: GmnParams, grads: dict[str, np.ndarray]) -> np.ndarray:
    a = p.arrays
    grads["out_w"] += np.outer(c.z, de)
    grads["out_b"] += de
    dz = a["out_w"] @ de
    d_gate_out = dz[None, :] * c.trans
    d_trans = dz[None, :] * c.gate
    d_gate_logits = d_gate_out * c.gate * (1.0 - c.gate)
    grads["gate_w"] += c.h.T @ d_gate_logits
    grads["gate_b"] += d_gate_logits.sum(axis=0)
    grads["trans_w"] += c.h.T @ d_trans
    grads["trans_b"] += d_trans.sum(axis=0)
    return d_gate_logits @ a["gate_w"].T + d_trans @ a["trans_w"].T


def _round_backward(
    dha_new: np.ndarray,
    dhb_new: np.ndarray,
    rc: _RoundCache,
    ga: _GraphArrays,
    gb: _GraphArrays,
    p: GmnParams,
    grads: dict[str, np.ndarray],
) -> tuple[np.ndarray, np.ndarray]:
    h_dim = p.config.node_hidden_dim
    m_dim = p.config.message_dim
    dua = _mlp2_backward(dha_new, rc.u_a[0], rc.u_a[1], p, "upd", grads)
    dub = _mlp2_backward(dhb_new, rc.u_b[0], rc.u_b[1], p, "upd", grads)
    dha = dua[:, :h_dim].copy()
    dmsg_a = dua[:, h_dim : h_dim + m_dim]
    dmu_a = dua[:, h_dim + m_dim :]
    dhb = dub[:, :h_dim].copy()
    dmsg_b = dub[:, h_dim : h_dim + m_dim]
    dmu_b = dub[:, h_dim + m_dim :]

    # mu_a = ha - pa @ hb ; mu_b = hb - pb @ ha
    dha += dmu_a
    dhb += dmu_b
    dpa = -(dmu_a @ rc.hb.T)
    dhb -= rc.pa.T @ dmu_a
    dpb = -(dmu_b @ rc.ha.T)
    dha -= rc.pb.T @ dmu_b

    # softmax rows: dL = P * (dP - rowsum(dP * P))
    dla = rc.pa * (dpa - (dpa * rc.pa).sum(axis=1, keepdims=True))
    dlb = rc.pb * (dpb - (dpb * rc.pb).sum(axis=1, keepdims=True))
    dlogits = dla + dlb.T  # pb was fed logits.T
    dha += dlogits @ rc.hb
    dhb += dlogits.T @ rc.ha

    for dmsg, mc, arrs, dh in ((dmsg_a, rc.msg_a, ga, dha), (dmsg_b, rc.msg_b, gb, dhb)):
        if mc is None:
            continue
        dm_out = dmsg[arrs.dst]
        dm_in = _mlp2_backward(dm_out, mc[0], mc[1], p, "msg", grads)
        np.add.at(dh, arrs.dst, dm_in[:, :h_dim])
        np.add.at(dh, arrs.src, dm_in[:, h_dim:])
    return dha, dhb


def _backward(dea: np.ndarray, deb: np.ndarray, cache: _PairCache, p: GmnParams) -> dict[str, np.ndarray]:
    grads = zero_like(p)
    dha = _aggregate_backward(dea, cache.agg_a, p, grads)
    dhb = _aggregate_backward(deb, cache.agg_b, p, grads)
    for rc in reversed(cache.rounds):
        dha, dhb = _round_backward(dha, dhb, rc, cache.ga, cache.gb, p, grads)
    _mlp2_backward(dha, cache.enc_a[0], cache.enc_a[1], p, "enc", grads)
    _mlp2_backward(dhb, cache.enc_b[0], cache.enc_b[1], p, "enc", grads)
    return grads


def _oriented(a: CallGraph, b: CallGraph) -> bool:
    """True when (a, b) is already in canonical order."""
    return serialize_graph(a) <= serialize_graph(b)


def embed_pair(
    a: CallGraph, b: CallGraph, params: GmnParams, stats: FeatureStats
) -> tuple[np.ndarray, np.ndarray]:
    """Embed both graphs of a pair jointly; returns 256-vectors (e_a, e_b)."""
    if _oriented(a, b):
        ea, eb, _ = _forward(_prepare(a, stats), _prepare(b, stats), params)
        return ea, eb
    eb, ea, _ = _forward(_prepare(b, stats), _prepare(a, stats), params)
    return ea, eb


def cosine_similarity(x: np.ndarray, y: np.ndarray) -> float:
    nx = float(np.linalg.norm(x))
    ny = float(np.linalg.norm(y))
    if nx == 0.0 or ny == 0.0:
        raise NumericError("cosine similarity of a zero vector is undefined")
    s = float(x @ y) / (nx * ny)
    return max(-1.0, min(1.0, s))


def pair_loss(similarity: float, label: int, margin: float, form: str = LOSS_REINTERPRETED) -> float:
    """Hinge on the pair similarity; zero once the labeled side clears the margin."""
    if label not in (-1, 1):
        raise ValueError(f"pair label must be -1 or +1, got {label}")
    if form == LOSS_REINTERPRETED:
        return max(0.0, margin - label * similarity)
    if form == LOSS_AS_WRITTEN:
        return max(0.0, margin - label * (1.0 - similarity))
    raise ValueError(f"unknown loss form {form!r}")


def _loss_grad(similarity: float, label: int, margin: float, form: str) -> float:
    """d loss / d similarity; zero on the hinge's flat side."""
    if form == LOSS_REINTERPRETED:
        return -float(label) if margin - label * similarity > 0 else 0.0
    if form == LOSS_AS_WRITTEN:
        return float(label) if margin - label * (1.0 - similarity) > 0 else 0.0
    raise ValueError(f"unknown loss form {form!r}")


def pair_gradients(
    a: CallGraph,
    b: CallGraph,
    label: int,
    params: GmnParams,
    stats: FeatureStats,
    margin: float | None = None,
    form: str | None = None,
) -> tuple[float, float, dict[str, np.ndarray]]:
    """Loss, similarity, and d loss / d params for one labeled pair."""
    cfg = params.config
    margin = cfg.margin if margin is None else margin
    form = cfg.loss_form if form is None else form
    first, second = (a, b) if _oriented(a, b) else (b, a)
    e1, e2, cache = _forward(_prepare(first, stats), _prepare(second, stats), params)

    n1 = float(np.linalg.norm(e1))
    n2 = float(np.linalg.norm(e2))
    if n1 == 0.0 or n2 == 0.0:
        raise NumericError("zero-vector embedding at readout")
    s_raw = float(e1 @ e2) / (n1 * n2)
    s = max(-1.0, min(1.0, s_raw))
    loss = pair_loss(s, label, margin, form)
    dl_ds = _loss_grad(s, label, margin, form)
    if dl_ds == 0.0:
        return loss, s, zero_like(params)
    de1 = dl_ds * (e2 / (n1 * n2) - s_raw * e1 / (n1 * n1))
    de2 = dl_ds * (e1 / (n1 * n2) - s_raw * e2 / (n2 * n2))
    grads = _backward(de1, de2, cache, params)
    return loss, s, grads
