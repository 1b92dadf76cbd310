"""Full network: input encoding with positional features, K stacked layers
(message passing + selective block, combined through an MLP), prediction
heads, and losses.

Layer update, per step k:

    x_m_hat, e_next = mpnn(x, e)
    x_g_hat         = gmb(x)            # binned if configured; m-fold averaged at eval
    x_m  = dropout(x_m_hat + x)
    x_g  = dropout(x_g_hat + x)
    x'   = mlp(x_m + x_g)

Graph-level heads mean-pool with exactly rounded summation (math.fsum) so
pooled outputs are bit-identical under node relabeling.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import instrument, ops
from .errors import ConfigError
from .gmb import (GMBParams, gmb_binned, inference_average, init_gmb_params,
                  register_gmb_params)
from .graph import Graph, eigenvector_centrality, laplacian_pe, node_degrees
from .mpnn import GatedGCNParams, gatedgcn_forward, init_gatedgcn_params, \
    register_gatedgcn_params
from .params import ParamStore, Tensor

HEADS = ("graph_class", "node_class", "graph_regress")
HEURISTICS = ("degree", "eigenvector_centrality", "none")


@dataclass
class ModelConfig:
    node_feat_dim: int
    edge_feat_dim: int
    d: int = 96                  # hidden dim
    k_layers: int = 4
    n_state: int = 16
    conv_kernel: int = 4
    expand: int = 1
    dt_rank: int | None = None   # None -> ceil(d_inner / 16)
    pe_dim: int = 8
    heuristic: str = "degree"
    noise: bool = True
    n_bins: int = 1
    m_eval: int = 5
    dropout: float = 0.0
    head: str = "node_class"
    out_dim: int = 2
    pool: str = "mean"
    dropout_pre_residual: bool = False
    d_skip: bool = True
    exact_zoh: bool = True
    scan_mode: str = "associative"

    def __post_init__(self):
        if self.k_layers < 1:
            raise ConfigError(f"k_layers must be >= 1, got {self.k_layers}")
        if self.d < 1:
            raise ConfigError(f"hidden dim must be >= 1, got {self.d}")
        if self.head not in HEADS:
            raise ConfigError(f"unknown head {self.head!r}")
        if self.heuristic not in HEURISTICS:
            raise ConfigError(f"unknown heuristic {self.heuristic!r}")
        if self.pool not in ("mean", "sum"):
            raise ConfigError(f"unknown pooling {self.pool!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def d_inner(self) -> int:
        return self.d * self.expand

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class LayerState:
    mpnn: GatedGCNParams
    gmb: GMBParams
    mlp_w_in: Tensor
    mlp_b_in: Tensor
    mlp_w_out: Tensor
    mlp_b_out: Tensor


@dataclass
class ModelState:
    config: ModelConfig
    store: ParamStore
    enc_node_w: Tensor
    enc_node_b: Tensor
    enc_edge_w: Tensor
    enc_edge_b: Tensor
    layers: list[LayerState] = field(default_factory=list)
    head_w_in: Tensor = None
    head_b_in: Tensor = None
    head_w_out: Tensor = None
    head_b_out: Tensor = None


def _lin_init(rng, din, dout):
    bound = 1.0 / np.sqrt(din)
    return (Tensor(rng.uniform(-bound, bound, size=(din, dout))),
            Tensor(rng.uniform(-bound, bound, size=dout)))


def init_model(cfg: ModelConfig, seed: int) -> ModelState:
    rng = np.random.default_rng(seed)
    store = ParamStore()

    in_dim = cfg.node_feat_dim + cfg.pe_dim
    enc_node_w, enc_node_b = _lin_init(rng, in_dim, cfg.d)
    enc_edge_w, enc_edge_b = _lin_init(rng, cfg.edge_feat_dim, cfg.d)
    store.register("enc.node.w", enc_node_w)
    store.register("enc.node.b", enc_node_b)
    store.register("enc.edge.w", enc_edge_w)
    store.register("enc.edge.b", enc_edge_b)

    layers = []
    for k in range(cfg.k_layers):
        mpnn = init_gatedgcn_params(cfg.d, rng)
        register_gatedgcn_params(store, f"layers.{k}.mpnn", mpnn)
        block = init_gmb_params(
            cfg.d, rng, expand=cfg.expand, n_state=cfg.n_state,
            conv_kernel=cfg.conv_kernel, dt_rank=cfg.dt_rank,
            with_skip=cfg.d_skip,
        )
        register_gmb_params(store, f"layers.{k}.gmb", block)
        w_in, b_in = _lin_init(rng, cfg.d, 2 * cfg.d)
        w_out, b_out = _lin_init(rng, 2 * cfg.d, cfg.d)
        store.register(f"layers.{k}.mlp.w_in", w_in)
        store.register(f"layers.{k}.mlp.b_in", b_in)
        store.register(f"layers.{k}.mlp.w_out", w_out)
        store.register(f"layers.{k}.mlp.b_out", b_out)
        layers.append(LayerState(mpnn=mpnn, gmb=block, mlp_w_in=w_in,
                                 mlp_b_in=b_in, mlp_w_out=w_out, mlp_b_out=b_out))

    head_w_in, head_b_in = _lin_init(rng, cfg.d, cfg.d)
    head_w_out, head_b_out = _lin_init(rng, cfg.d, cfg.out_dim)
    store.register("head.w_in", head_w_in)
    store.register("head.b_in", head_b_in)
    store.register("head.w_out", head_w_out)
    store.register("head.b_out", head_b_out)

    return ModelState(
        config=cfg, store=store,
        enc_node_w=enc_node_w, enc_node_b=enc_node_b,
        enc_edge_w=enc_edge_w, enc_edge_b=enc_edge_b,
        layers=layers,
        head_w_in=head_w_in, head_b_in=head_b_in,
        head_w_out=head_w_out, head_b_out=head_b_out,
    )


def mamba_block_param_count(cfg: ModelConfig) -> int:
    """Learnable scalars in a single selective block at this configuration."""
    rng = np.random.default_rng(0)
    block = init_gmb_params(cfg.d, rng, expand=cfg.expand, n_state=cfg.n_state,
                            conv_kernel=cfg.conv_kernel, dt_rank=cfg.dt_rank,
                            with_skip=cfg.d_skip)
    return block.num_elements()


def positional_encoding(g: Graph, pe_dim: int) -> np.ndarray:
    """Laplacian PE, zero-padded when the graph has fewer usable eigenvectors."""
    if pe_dim == 0:
        return np.zeros((g.num_nodes, 0))
    avail = min(pe_dim, g.num_nodes - 1)
    pe = np.zeros((g.num_nodes, pe_dim))
    if avail > 0:
        try:
            cols = laplacian_pe(g, avail)
        except ConfigError:
            # fewer nonzero eigenvalues than requested (tiny/disconnected graph)
            cols = laplacian_pe(g, 0)
        pe[:, : cols.shape[1]] = cols
    return pe


def node_heuristic_values(g: Graph, kind: str) -> np.ndarray:
    if kind == "degree":
        return node_degrees(g)
    if kind == "eigenvector_centrality":
        return eigenvector_centrality(g)
    if kind == "none":
        return np.zeros(g.num_nodes)
    raise ConfigError(f"unknown heuristic {kind!r}")


def encode_inputs(g: Graph, pe: np.ndarray, state: ModelState):
    """x0 = Linear([node_feat || pe]); e0 = Linear(edge_feat)."""
    cfg = state.config
    if g.node_feat.shape[1] != cfg.node_feat_dim:
        raise ConfigError(
            f"graph node features have width {g.node_feat.shape[1]}, "
            f"config expects {cfg.node_feat_dim}"
        )
    if g.edge_feat.shape[1] != cfg.edge_feat_dim:
        raise ConfigError(
            f"graph edge features have width {g.edge_feat.shape[1]}, "
            f"config expects {cfg.edge_feat_dim}"
        )
    if pe.shape != (g.num_nodes, cfg.pe_dim):
        raise ConfigError(f"pe shape {pe.shape} != ({g.num_nodes}, {cfg.pe_dim})")
    stacked = np.concatenate([g.node_feat, pe], axis=1)
    instrument.track(stacked)
    x0, bwd_node = ops.linear(stacked, state.enc_node_w.data, state.enc_node_b.data)
    e0, bwd_edge = ops.linear(g.edge_feat, state.enc_edge_w.data, state.enc_edge_b.data)

    def backward(dx0, de0):
        _, dw_n, db_n = bwd_node(dx0)
        state.enc_node_w.add_grad(dw_n)
        state.enc_node_b.add_grad(db_n)
        _, dw_e, db_e = bwd_edge(de0)
        state.enc_edge_w.add_grad(dw_e)
        state.enc_edge_b.add_grad(db_e)

    return x0, e0, backward


def gmb_layer(x, e, g: Graph, layer: LayerState, heur, rng, *, training: bool,
              cfg: ModelConfig):
    """One stacked layer; returns ``(x_next, e_next, backward)``."""
    x_m_hat, e_next, bwd_mpnn = gatedgcn_forward(x, e, g.edges, layer.mpnn)

    if training:
        x_g_hat, bwd_gmb = gmb_binned(
            x, heur, cfg.n_bins, layer.gmb, rng, training=True,
            add_noise=cfg.noise, scan_mode=cfg.scan_mode, exact_zoh=cfg.exact_zoh,
        )
    else:
        bwd_gmb = None
        m = cfg.m_eval if cfg.noise else 1
        if m > 1:
            seeds = [int(s) for s in rng.integers(0, 2**63 - 1, size=m)]
            x_g_hat = inference_average(
                x, heur, layer.gmb, m, seeds, n_bins=cfg.n_bins,
                add_noise=cfg.noise, scan_mode=cfg.scan_mode,
                exact_zoh=cfg.exact_zoh,
            )
        else:
            x_g_hat, _ = gmb_binned(
                x, heur, cfg.n_bins, layer.gmb, rng, training=False,
                add_noise=cfg.noise, scan_mode=cfg.scan_mode,
                exact_zoh=cfg.exact_zoh,
            )

    instrument.add_flops(instrument.elemwise_flops(3 * x.size))  # two residuals + branch sum
    if cfg.dropout_pre_residual:
        x_m_drop, bwd_drop_m = ops.dropout(x_m_hat, cfg.dropout, rng, training)
        x_g_drop, bwd_drop_g = ops.dropout(x_g_hat, cfg.dropout, rng, training)
        x_m = x_m_drop + x
        x_g = x_g_drop + x
    else:
        x_m, bwd_drop_m = ops.dropout(x_m_hat + x, cfg.dropout, rng, training)
        x_g, bwd_drop_g = ops.dropout(x_g_hat + x, cfg.dropout, rng, training)

    x_next, bwd_mlp = ops.mlp2(x_m + x_g, layer.mlp_w_in.data, layer.mlp_b_in.data,
                               layer.mlp_w_out.data, layer.mlp_b_out.data)
    instrument.track(x_next)

    def backward(dx_next, de_next):
        dsum, dw_in, db_in, dw_out, db_out = bwd_mlp(dx_next)
        layer.mlp_w_in.add_grad(dw_in)
        layer.mlp_b_in.add_grad(db_in)
        layer.mlp_w_out.add_grad(dw_out)
        layer.mlp_b_out.add_grad(db_out)

        (dx_m_path,) = bwd_drop_m(dsum)
        (dx_g_path,) = bwd_drop_g(dsum)
        if cfg.dropout_pre_residual:
            dx_m_hat, dres_m = dx_m_path, dsum
            dx_g_hat, dres_g = dx_g_path, dsum
        else:
            dx_m_hat, dres_m = dx_m_path, dx_m_path
            dx_g_hat, dres_g = dx_g_path, dx_g_path

        dx = dres_m + dres_g
        if bwd_gmb is None:
            raise ConfigError("backward through an inference-mode layer")
        dx = dx + bwd_gmb(dx_g_hat)
        dx_mpnn, de = bwd_mpnn(dx_m_hat, de_next)
        dx = dx + dx_mpnn
        return dx, de

    return x_next, e_next, backward


def _pool_exact(x: np.ndarray, mean: bool) -> np.ndarray:
    """Column sums via math.fsum: exactly rounded, hence order-invariant."""
    sums = np.array([math.fsum(col) for col in x.T])
    return sums / x.shape[0] if mean else sums


def model_forward(g: Graph, state: ModelState, rng, *, training: bool,
                  pe: np.ndarray | None = None, heur: np.ndarray | None = None):
    """K layer iterations plus the prediction head.

    Returns ``(output, backward)``; ``backward(dout)`` accumulates all
    parameter gradients (training mode only).
    """
    cfg = state.config
    if pe is None:
        pe = positional_encoding(g, cfg.pe_dim)
    if heur is None:
        heur = node_heuristic_values(g, cfg.heuristic)

    x, e, bwd_enc = encode_inputs(g, pe, state)
    layer_bwds = []
    for layer in state.layers:
        x, e, bwd = gmb_layer(x, e, g, layer, heur, rng, training=training, cfg=cfg)
        layer_bwds.append(bwd)

    if cfg.head == "node_class":
        out, bwd_head = ops.mlp2(x, state.head_w_in.data, state.head_b_in.data,
                                 state.head_w_out.data, state.head_b_out.data)
    else:
        instrument.add_flops(instrument.mean_pool_flops(*x.shape))
        pooled = _pool_exact(x, mean=cfg.pool == "mean")
        out_row, bwd_head = ops.mlp2(pooled[None, :], state.head_w_in.data,
                                     state.head_b_in.data, state.head_w_out.data,
                                     state.head_b_out.data)
        out = out_row[0]

    def backward(dout):
        if cfg.head == "node_class":
            dx, dw_in, db_in, dw_out, db_out = bwd_head(dout)
        else:
            dpooled, dw_in, db_in, dw_out, db_out = bwd_head(dout[None, :])
            scale = 1.0 / g.num_nodes if cfg.pool == "mean" else 1.0
            dx = np.broadcast_to(dpooled[0] * scale, x.shape).copy()
        state.head_w_in.add_grad(dw_in)
        state.head_b_in.add_grad(db_in)
        state.head_w_out.add_grad(dw_out)
        state.head_b_out.add_grad(db_out)

        de = np.zeros((g.num_edges, cfg.d))
        for bwd in reversed(layer_bwds):
            dx, de = bwd(dx, de)
        bwd_enc(dx, de)

    return out, backward


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=-1, keepdims=True)


def loss(output, label, kind: str):
    """Scalar loss and its gradient w.r.t. ``output``.

    ``cross_entropy``: softmax CE, averaged over instances.  Node-level
    labels are int vectors; entries < 0 are unlabeled and ignored.
    ``mae``: mean absolute error.
    """
    if kind == "cross_entropy":
        if np.ndim(output) == 1:
            logits = np.asarray(output)[None, :]
            labels = np.array([int(label)])
        else:
            logits = np.asarray(output)
            labels = np.asarray(label, dtype=np.int64)
            mask = labels >= 0
            logits = logits[mask]
            labels = labels[mask]
        n, c = logits.shape
        if n == 0:
            raise ConfigError("cross_entropy: no labeled instances")
        if labels.min() < 0 or labels.max() >= c:
            raise ConfigError(f"label out of range [0, {c})")
        probs = _softmax(logits)
        value = float(-np.log(probs[np.arange(n), labels] + 1e-300).mean())
        grad_rows = probs.copy()
        grad_rows[np.arange(n), labels] -= 1.0
        grad_rows /= n
        if np.ndim(output) == 1:
            return value, grad_rows[0]
        full = np.zeros_like(np.asarray(output, dtype=np.float64))
        full[np.asarray(label, dtype=np.int64) >= 0] = grad_rows
        return value, full
    if kind == "mae":
        out = np.asarray(output, dtype=np.float64)
        target = np.asarray(label, dtype=np.float64)
        if out.shape != target.shape:
            raise ConfigError(f"mae: output {out.shape} vs label {target.shape}")
        diff = out - target
        value = float(np.abs(diff).mean())
        return value, np.sign(diff) / diff.size
    raise ConfigError(f"unknown loss kind {kind!r}")


def loss_kind_for_head(head: str) -> str:
    return "mae" if head == "graph_regress" else "cross_entropy"
