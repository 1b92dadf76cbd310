"""Edge-gated message passing (GatedGCN-style), updating node and edge embeddings.

For a directed edge (src -> dst) with embedding e:

    e_hat   = x_dst P + x_src Q + e R + b_e
    eta     = sigmoid(e_hat) / (sum over dst's incoming sigmoid(e_hat) + eps)
    x_hat_i = ReLU(LayerNorm(x_i U + sum_{incoming} eta * (x_src V)))

The pre-activation e_hat is the updated edge embedding.  Normalization is
layer norm (no cross-graph statistics).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import instrument, ops
from .errors import ConfigError
from .params import ParamStore, Tensor

EPS_GATE = 1e-6


@dataclass
class GatedGCNParams:
    u: Tensor
    v: Tensor
    p: Tensor
    q: Tensor
    r: Tensor
    b_e: Tensor
    ln_g: Tensor
    ln_b: Tensor
    eps_gate: float = EPS_GATE


def init_gatedgcn_params(d: int, rng) -> GatedGCNParams:
    bound = 1.0 / np.sqrt(d)
    def w():
        return Tensor(rng.uniform(-bound, bound, size=(d, d)))
    return GatedGCNParams(
        u=w(), v=w(), p=w(), q=w(), r=w(),
        b_e=Tensor(rng.uniform(-bound, bound, size=d)),
        ln_g=Tensor(np.ones(d)),
        ln_b=Tensor(np.zeros(d)),
    )


def register_gatedgcn_params(store: ParamStore, prefix: str, p: GatedGCNParams) -> None:
    for name in ("u", "v", "p", "q", "r", "b_e", "ln_g", "ln_b"):
        store.register(f"{prefix}.{name}", getattr(p, name))


def gatedgcn_forward(x, e_emb, edges, params: GatedGCNParams):
    """Returns ``(x_hat, e_hat, backward)``.

    ``backward(dx_hat, de_hat)`` accumulates parameter gradients in place
    and returns ``(dx, de_emb)``.
    """
    num_nodes, d = x.shape
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if len(edges) and (edges.min() < 0 or edges.max() >= num_nodes):
        raise ConfigError("gatedgcn: dangling edge index")
    src, dst = edges[:, 0], edges[:, 1]

    xp, bwd_p = ops.linear(x, params.p.data)
    xq, bwd_q = ops.linear(x, params.q.data)
    er, bwd_r = ops.linear(e_emb, params.r.data, params.b_e.data)
    e_hat = xp[dst] + xq[src] + er
    instrument.add_flops(instrument.elemwise_flops(2 * e_hat.size))
    instrument.track(e_hat)

    gate, bwd_gate = ops.sigmoid(e_hat)
    denom = np.full((num_nodes, d), params.eps_gate)
    np.add.at(denom, dst, gate)
    eta = gate / denom[dst] if len(edges) else gate
    instrument.add_flops(instrument.elemwise_flops(2 * gate.size))

    xv, bwd_v = ops.linear(x, params.v.data)
    msg = eta * xv[src] if len(edges) else np.zeros((0, d))
    agg = np.zeros((num_nodes, d))
    np.add.at(agg, dst, msg)
    instrument.add_flops(instrument.elemwise_flops(2 * msg.size))

    xu, bwd_u = ops.linear(x, params.u.data)
    pre = xu + agg
    instrument.add_flops(instrument.elemwise_flops(pre.size))
    normed, bwd_ln = ops.layer_norm(pre, params.ln_g.data, params.ln_b.data)
    x_hat, bwd_relu = ops.relu(normed)
    instrument.track(x_hat)

    def backward(dx_hat, de_hat_up):
        (dnormed,) = bwd_relu(dx_hat)
        dpre, dln_g, dln_b = bwd_ln(dnormed)
        params.ln_g.add_grad(dln_g)
        params.ln_b.add_grad(dln_b)

        dxu_in, du, _ = bwd_u(dpre)
        params.u.add_grad(du)
        dx = dxu_in

        dmsg = dpre[dst]
        deta = dmsg * xv[src]
        dxv = np.zeros_like(xv)
        np.add.at(dxv, src, dmsg * eta)
        dxv_in, dv, _ = bwd_v(dxv)
        params.v.add_grad(dv)
        dx = dx + dxv_in

        # eta = gate / denom[dst]; denom = eps + scatter-sum of gate.
        dgate = deta / denom[dst] if len(edges) else deta
        ddenom = np.zeros_like(denom)
        np.add.at(ddenom, dst, -deta * gate / (denom[dst] ** 2))
        dgate = dgate + ddenom[dst]
        (de_hat,) = bwd_gate(dgate)
        if de_hat_up is not None:
            de_hat = de_hat + de_hat_up

        dxp = np.zeros_like(xp)
        np.add.at(dxp, dst, de_hat)
        dxp_in, dp, _ = bwd_p(dxp)
        params.p.add_grad(dp)
        dx = dx + dxp_in

        dxq = np.zeros_like(xq)
        np.add.at(dxq, src, de_hat)
        dxq_in, dq, _ = bwd_q(dxq)
        params.q.add_grad(dq)
        dx = dx + dxq_in

        de_emb, dr, db_e = bwd_r(de_hat)
        params.r.add_grad(dr)
        params.b_e.add_grad(db_e)
        return dx, de_emb

    return x_hat, e_hat, backward
