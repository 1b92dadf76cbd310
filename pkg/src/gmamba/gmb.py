"""The graph selective-scan block.

One block: jitter the node heuristic, sort ascending (important nodes
last, where the unidirectional scan gives them the most context), run the
Mamba-style selective path, gate, project back, and restore the original
node order.  Includes the binning variant for long sequences and m-fold
output averaging for inference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import instrument, ops
from .errors import ConfigError
from .params import ParamStore, Tensor
from .ssm import SSMParams, init_ssm_params, ssm_apply


@dataclass
class SortPlan:
    """Forward and inverse permutations; gathering by both is the identity."""

    i_sorted: np.ndarray
    i_reverse: np.ndarray


def jitter_heuristic(h: np.ndarray, rng) -> np.ndarray:
    """Add i.i.d. Uniform[0,1) noise so equal-heuristic nodes shuffle."""
    if not np.all(np.isfinite(h)):
        raise ConfigError("heuristic must be finite")
    instrument.add_flops(instrument.jitter_flops(len(h)))
    return h + rng.random(len(h))


def make_sort_plan(h: np.ndarray) -> SortPlan:
    """Stable ascending argsort and its inverse."""
    i_sorted = np.argsort(h, kind="stable")
    i_reverse = np.argsort(i_sorted, kind="stable")
    return SortPlan(i_sorted=i_sorted, i_reverse=i_reverse)


@dataclass
class GMBParams:
    """All learnable weights of one block."""

    ln_g: Tensor
    ln_b: Tensor
    w0: Tensor          # D -> D' input projection
    b0: Tensor
    w1: Tensor          # D -> D' gate projection
    b1: Tensor
    conv_w: Tensor      # [D', k] depthwise causal kernel
    conv_b: Tensor
    wb: Tensor          # D' -> N
    wc: Tensor          # D' -> N
    w_dt_in: Tensor     # D' -> R (low-rank dt factorization)
    w_dt_out: Tensor    # R -> D'
    b_dt: Tensor
    w2: Tensor          # D' -> D output projection
    b2: Tensor
    ssm: SSMParams

    @property
    def d_model(self) -> int:
        return self.w0.shape[0]

    @property
    def d_inner(self) -> int:
        return self.w0.shape[1]

    def num_elements(self) -> int:
        total = 0
        for t in self.tensors():
            total += t.size
        return total

    def tensors(self):
        ts = [self.ln_g, self.ln_b, self.w0, self.b0, self.w1, self.b1,
              self.conv_w, self.conv_b, self.wb, self.wc,
              self.w_dt_in, self.w_dt_out, self.b_dt, self.w2, self.b2,
              self.ssm.a_log]
        if self.ssm.d_skip is not None:
            ts.append(self.ssm.d_skip)
        return ts


def default_dt_rank(d_inner: int) -> int:
    return max(1, math.ceil(d_inner / 16))


def init_gmb_params(d: int, rng, *, expand: int = 1, n_state: int = 16,
                    conv_kernel: int = 4, dt_rank: int | None = None,
                    with_skip: bool = True, dt_min: float = 1e-3,
                    dt_max: float = 1e-1) -> GMBParams:
    """Fan-in uniform init for linears; dt bias set so softplus(b_dt) lands
    in [dt_min, dt_max], keeping abar away from saturation."""
    d_inner = expand * d
    rank = default_dt_rank(d_inner) if dt_rank is None else dt_rank

    def lin(din, dout, bias=True):
        bound = 1.0 / np.sqrt(din)
        w = Tensor(rng.uniform(-bound, bound, size=(din, dout)))
        b = Tensor(rng.uniform(-bound, bound, size=dout)) if bias else None
        return w, b

    w0, b0 = lin(d, d_inner)
    w1, b1 = lin(d, d_inner)
    wb, _ = lin(d_inner, n_state, bias=False)
    wc, _ = lin(d_inner, n_state, bias=False)
    w_dt_in, _ = lin(d_inner, rank, bias=False)
    w_dt_out, _ = lin(rank, d_inner, bias=False)
    w2, b2 = lin(d_inner, d)

    dt = np.exp(rng.uniform(np.log(dt_min), np.log(dt_max), size=d_inner))
    b_dt = Tensor(np.log(np.expm1(dt)))  # softplus inverse

    kb = 1.0 / np.sqrt(conv_kernel)
    conv_w = Tensor(rng.uniform(-kb, kb, size=(d_inner, conv_kernel)))
    conv_b = Tensor(rng.uniform(-kb, kb, size=d_inner))

    return GMBParams(
        ln_g=Tensor(np.ones(d)), ln_b=Tensor(np.zeros(d)),
        w0=w0, b0=b0, w1=w1, b1=b1,
        conv_w=conv_w, conv_b=conv_b,
        wb=wb, wc=wc,
        w_dt_in=w_dt_in, w_dt_out=w_dt_out, b_dt=b_dt,
        w2=w2, b2=b2,
        ssm=init_ssm_params(d_inner, n_state, with_skip=with_skip),
    )


def register_gmb_params(store: ParamStore, prefix: str, p: GMBParams) -> None:
    names = ["ln_g", "ln_b", "w0", "b0", "w1", "b1", "conv_w", "conv_b",
             "wb", "wc", "w_dt_in", "w_dt_out", "b_dt", "w2", "b2"]
    for name in names:
        store.register(f"{prefix}.{name}", getattr(p, name))
    store.register(f"{prefix}.a_log", p.ssm.a_log)
    if p.ssm.d_skip is not None:
        store.register(f"{prefix}.d_skip", p.ssm.d_skip)


def gmb_forward(x, h, params: GMBParams, rng, *, training: bool,
                add_noise: bool = True, scan_mode: str = "associative",
                exact_zoh: bool = True):
    """One full block pass; returns ``(x_out, backward)`` in original node order.

    ``backward(dx_out)`` accumulates parameter gradients and returns dx.
    """
    if x.shape[0] != len(h):
        raise ConfigError(f"gmb: {x.shape[0]} embeddings vs {len(h)} heuristic entries")
    hp = jitter_heuristic(h, rng) if add_noise else h
    plan = make_sort_plan(hp)
    xs = x[plan.i_sorted]
    instrument.track(xs)

    xn, bwd_ln = ops.layer_norm(xs, params.ln_g.data, params.ln_b.data)
    x0, bwd_w0 = ops.linear(xn, params.w0.data, params.b0.data)
    g_pre, bwd_w1 = ops.linear(xn, params.w1.data, params.b1.data)
    xg, bwd_gact = ops.silu(g_pre)

    xc_pre, bwd_conv = ops.causal_dwconv1d(x0, params.conv_w.data, params.conv_b.data)
    xc, bwd_cact = ops.silu(xc_pre)

    b_proj, bwd_wb = ops.linear(xc, params.wb.data)
    c_proj, bwd_wc = ops.linear(xc, params.wc.data)
    dt_low, bwd_dt_in = ops.linear(xc, params.w_dt_in.data)
    dt_pre, bwd_dt_out = ops.linear(dt_low, params.w_dt_out.data, params.b_dt.data)
    dt, bwd_sp = ops.softplus(dt_pre)

    y, bwd_scan = ssm_apply(xc, dt, b_proj, c_proj, params.ssm,
                            exact=exact_zoh, scan_mode=scan_mode)

    yg = y * xg
    instrument.add_flops(instrument.elemwise_flops(yg.size))
    out_sorted, bwd_w2 = ops.linear(yg, params.w2.data, params.b2.data)
    out = out_sorted[plan.i_reverse]
    instrument.track(out)

    def backward(dout):
        dout_sorted = dout[plan.i_sorted]
        dyg, dw2, db2 = bwd_w2(dout_sorted)
        params.w2.add_grad(dw2)
        params.b2.add_grad(db2)

        dy = dyg * xg
        dxg = dyg * y

        grads = bwd_scan(dy)
        params.ssm.a_log.add_grad(grads.a_log)
        if params.ssm.d_skip is not None:
            params.ssm.d_skip.add_grad(grads.d_skip)

        (ddt_pre,) = bwd_sp(grads.dt)
        ddt_low, dw_dt_out, db_dt = bwd_dt_out(ddt_pre)
        params.w_dt_out.add_grad(dw_dt_out)
        params.b_dt.add_grad(db_dt)
        dxc, dw_dt_in, _ = bwd_dt_in(ddt_low)
        params.w_dt_in.add_grad(dw_dt_in)

        dxc_b, dwb, _ = bwd_wb(grads.b)
        params.wb.add_grad(dwb)
        dxc_c, dwc, _ = bwd_wc(grads.c)
        params.wc.add_grad(dwc)
        dxc = dxc + dxc_b + dxc_c + grads.x

        (dxc_pre,) = bwd_cact(dxc)
        dx0, dconv_w, dconv_b = bwd_conv(dxc_pre)
        params.conv_w.add_grad(dconv_w)
        params.conv_b.add_grad(dconv_b)

        (dg_pre,) = bwd_gact(dxg)
        dxn_g, dw1, db1 = bwd_w1(dg_pre)
        params.w1.add_grad(dw1)
        params.b1.add_grad(db1)
        dxn_0, dw0, db0 = bwd_w0(dx0)
        params.w0.add_grad(dw0)
        params.b0.add_grad(db0)

        dxs, dln_g, dln_b = bwd_ln(dxn_g + dxn_0)
        params.ln_g.add_grad(dln_g)
        params.ln_b.add_grad(dln_b)
        return dxs[plan.i_reverse]

    return out, backward


def _bin_slices(length: int, n_bins: int) -> list[slice]:
    size = math.ceil(length / n_bins)
    return [slice(a, min(a + size, length)) for a in range(0, length, size)]


def gmb_binned(x, h, n_bins: int, params: GMBParams, rng, *, training: bool,
               add_noise: bool = True, scan_mode: str = "associative",
               exact_zoh: bool = True):
    """Random partition into near-equal bins, each scanned independently.

    With ``n_bins == 1`` this is exactly :func:`gmb_forward` on the same
    rng stream (no partition draw).  Nodes in different bins cannot
    interact through the scan.
    """
    length = x.shape[0]
    if not 1 <= n_bins <= length:
        raise ConfigError(f"n_bins must be in [1, {length}], got {n_bins}")
    if n_bins == 1:
        return gmb_forward(x, h, params, rng, training=training,
                           add_noise=add_noise, scan_mode=scan_mode,
                           exact_zoh=exact_zoh)
    perm = rng.permutation(length)
    out = np.zeros_like(x)
    backs = []
    for sl in _bin_slices(length, n_bins):
        idx = perm[sl]
        bin_out, bin_bwd = gmb_forward(
            x[idx], h[idx], params, rng, training=training,
            add_noise=add_noise, scan_mode=scan_mode, exact_zoh=exact_zoh,
        )
        out[idx] = bin_out
        backs.append((idx, bin_bwd))

    def backward(dout):
        dx = np.zeros_like(dout)
        for idx, bin_bwd in backs:
            dx[idx] = bin_bwd(dout[idx])
        return dx

    return out, backward


def inference_average(x, h, params: GMBParams, m: int, seeds, *,
                      n_bins: int = 1, add_noise: bool = True,
                      scan_mode: str = "associative", exact_zoh: bool = True):
    """Mean of m eval-mode passes under independent jitter seeds."""
    if m < 1:
        raise ConfigError(f"inference_average needs m >= 1, got {m}")
    if len(seeds) < m:
        raise ConfigError(f"need at least {m} seeds, got {len(seeds)}")
    total = None
    for i in range(m):
        pass_rng = np.random.default_rng(int(seeds[i]))
        out, _ = gmb_binned(x, h, n_bins, params, pass_rng, training=False,
                            add_noise=add_noise, scan_mode=scan_mode,
                            exact_zoh=exact_zoh)
        total = out if total is None else total + out
    instrument.add_flops(instrument.elemwise_flops(total.size))
    return total / m
