import numpy as np
import numpy.testing as npt
import pytest

from gmamba import ops
from gmamba.errors import DomainError
from gmamba.ssm import (ScanInputs, SSMParams, associative_scan_fwd, discretize,
                        dump_scan_trace, gated_rnn_reference, init_ssm_params,
                        selective_scan_bwd, selective_scan_fwd, ssm_apply)
from gmamba.params import Tensor

from oracles import rk4_zoh_step, unrolled_scan


def random_case(rng, length, d_inner, n_state):
    x = rng.standard_normal((length, d_inner))
    dt = np.exp(rng.uniform(-2.5, 0.5, size=(length, d_inner)))
    a = -np.exp(rng.uniform(-1.0, 1.0, size=(d_inner, n_state)))
    b = rng.standard_normal((length, n_state))
    c = rng.standard_normal((length, n_state))
    return x, dt, a, b, c


class TestDiscretize:
    def test_appendix_identity_case(self):
        # A=-1, dt=ln 2, B=1: abar = 1/2 and bbar = 1 - abar.
        abar, bbar = discretize(np.full((1, 1), np.log(2.0)), np.array([[-1.0]]),
                                np.ones((1, 1)))
        npt.assert_allclose(abar[0, 0, 0], 0.5, atol=1e-15)
        npt.assert_allclose(bbar[0, 0, 0], 0.5, atol=1e-15)
        npt.assert_allclose(bbar, 1.0 - abar, atol=1e-15)

    def test_small_dt_limit(self):
        abar, bbar = discretize(np.full((1, 1), 1e-12), np.array([[-1.0]]),
                                np.ones((1, 1)))
        npt.assert_allclose(abar[0, 0, 0], 1.0, atol=1e-10)
        npt.assert_allclose(bbar[0, 0, 0], 0.0, atol=1e-10)

    def test_matches_rk4_ode_integration(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            a = -np.exp(rng.uniform(-1, 1))
            b = rng.standard_normal()
            x = rng.standard_normal()
            dt = np.exp(rng.uniform(-3, 0))
            _, bbar = discretize(np.full((1, 1), dt), np.array([[a]]),
                                 np.array([[b]]))
            npt.assert_allclose(bbar[0, 0, 0] * x, rk4_zoh_step(a, b, x, dt),
                                atol=1e-8)

    def test_rejects_nonpositive_dt(self):
        with pytest.raises(DomainError):
            discretize(np.zeros((1, 1)), np.array([[-1.0]]), np.ones((1, 1)))

    def test_rejects_nonnegative_a(self):
        with pytest.raises(DomainError):
            discretize(np.ones((1, 1)), np.array([[0.0]]), np.ones((1, 1)))

    def test_simplified_variant(self):
        dt = np.full((2, 1), 0.3)
        a = np.array([[-2.0]])
        b = np.ones((2, 1))
        _, bbar = discretize(dt, a, b, exact=False)
        npt.assert_allclose(bbar, 0.3, atol=1e-15)


class TestSequentialScan:
    def test_length_one(self):
        rng = np.random.default_rng(1)
        x, dt, a, b, c = random_case(rng, 1, 2, 3)
        abar, bbar = discretize(dt, a, b)
        out = selective_scan_fwd(ScanInputs(x=x, dt=dt, b=b, c=c), abar, bbar)
        npt.assert_allclose(out.y[0], (bbar[0] * x[0][:, None] * c[0]).sum(axis=1),
                            atol=1e-14)

    def test_zero_abar_is_memoryless(self):
        rng = np.random.default_rng(2)
        length, d_inner, n_state = 5, 2, 3
        x, dt, a, b, c = random_case(rng, length, d_inner, n_state)
        abar = np.zeros((length, d_inner, n_state))
        bbar = rng.standard_normal((length, d_inner, n_state))
        out = selective_scan_fwd(ScanInputs(x=x, dt=dt, b=b, c=c), abar, bbar)
        expect = np.einsum("tn,tdn,td->td", c, bbar, x)
        npt.assert_allclose(out.y, expect, atol=1e-14)

    def test_matches_unrolled_summation(self):
        rng = np.random.default_rng(3)
        x, dt, a, b, c = random_case(rng, 8, 3, 4)
        abar, bbar = discretize(dt, a, b)
        skip = rng.standard_normal(3)
        out = selective_scan_fwd(ScanInputs(x=x, dt=dt, b=b, c=c), abar, bbar, skip)
        npt.assert_allclose(out.y, unrolled_scan(x, abar, bbar, c, skip), atol=1e-10)

    def test_hidden_satisfies_recurrence(self):
        rng = np.random.default_rng(4)
        x, dt, a, b, c = random_case(rng, 6, 2, 2)
        abar, bbar = discretize(dt, a, b)
        out = selective_scan_fwd(ScanInputs(x=x, dt=dt, b=b, c=c), abar, bbar)
        for t in range(1, 6):
            npt.assert_allclose(
                out.hidden[t],
                abar[t] * out.hidden[t - 1] + bbar[t] * x[t][:, None],
                atol=1e-15,
            )

    def test_causality(self):
        rng = np.random.default_rng(5)
        x, dt, a, b, c = random_case(rng, 7, 2, 3)
        abar, bbar = discretize(dt, a, b)
        base = selective_scan_fwd(ScanInputs(x=x, dt=dt, b=b, c=c), abar, bbar)
        x2 = x.copy()
        x2[5] += 3.0
        pert = selective_scan_fwd(ScanInputs(x=x2, dt=dt, b=b, c=c), abar, bbar)
        npt.assert_array_equal(base.y[:5], pert.y[:5])
        assert not np.allclose(base.y[5:], pert.y[5:])


class TestAssociativeScan:
    def test_matches_sequential_100_cases(self):
        rng = np.random.default_rng(6)
        for _ in range(100):
            length = int(rng.integers(1, 33))
            d_inner = int(rng.integers(1, 4))
            n_state = int(rng.integers(1, 5))
            x, dt, a, b, c = random_case(rng, length, d_inner, n_state)
            abar, bbar = discretize(dt, a, b)
            inputs = ScanInputs(x=x, dt=dt, b=b, c=c)
            seq = selective_scan_fwd(inputs, abar, bbar)
            par = associative_scan_fwd(inputs, abar, bbar)
            npt.assert_allclose(par.y, seq.y, atol=1e-10)

    def test_length_one_bitwise(self):
        rng = np.random.default_rng(7)
        x, dt, a, b, c = random_case(rng, 1, 3, 2)
        abar, bbar = discretize(dt, a, b)
        inputs = ScanInputs(x=x, dt=dt, b=b, c=c)
        npt.assert_array_equal(associative_scan_fwd(inputs, abar, bbar).y,
                               selective_scan_fwd(inputs, abar, bbar).y)

    def test_two_step_composition_algebra(self):
        a1, b1 = 0.5, 2.0
        a2, b2 = 0.25, -1.0
        # composing (a2, b2) after (a1, b1) on h0 = 0 gives a2*b1 + b2
        h1 = a1 * 0.0 + b1
        h2 = a2 * h1 + b2
        assert h2 == (a2 * a1) * 0.0 + (a2 * b1 + b2)


class TestAppendixTheorem:
    def test_scan_equals_gated_rnn(self):
        rng = np.random.default_rng(8)
        worst = 0.0
        for _ in range(100):
            length = int(rng.integers(1, 65))
            x = rng.standard_normal(length)
            z = rng.standard_normal(length) * 2.0
            dt = np.logaddexp(0.0, z)[:, None]  # softplus(z)
            a = np.array([[-1.0]])
            ones = np.ones((length, 1))
            abar, bbar = discretize(dt, a, ones)
            out = selective_scan_fwd(
                ScanInputs(x=x[:, None], dt=dt, b=ones, c=ones), abar, bbar
            )
            ref = gated_rnn_reference(x, z)
            worst = max(worst, float(np.max(np.abs(out.y[:, 0] - ref))))
        assert worst < 1e-12

    def test_gate_extremes(self):
        x = np.array([1.0, 2.0, 3.0])
        frozen = gated_rnn_reference(x, np.full(3, -40.0))
        npt.assert_allclose(frozen, 0.0, atol=1e-12)  # h stays at h0 = 0
        reset = gated_rnn_reference(x, np.full(3, 40.0))
        npt.assert_allclose(reset, x, atol=1e-12)


class TestStability:
    def test_abar_in_unit_interval(self):
        rng = np.random.default_rng(9)
        x, dt, a, b, c = random_case(rng, 20, 4, 8)
        abar, _ = discretize(dt, a, b)
        assert np.all(abar > 0.0) and np.all(abar < 1.0)

    def test_hidden_norm_bound_constant_coefficients(self):
        rng = np.random.default_rng(10)
        length, d_inner, n_state = 50, 2, 3
        x = rng.standard_normal((length, d_inner))
        dt = np.full((length, d_inner), 0.4)
        a = -np.exp(rng.uniform(-0.5, 0.5, size=(d_inner, n_state)))
        b = np.tile(rng.standard_normal(n_state), (length, 1))
        c = rng.standard_normal((length, n_state))
        abar, bbar = discretize(dt, a, b)
        out = selective_scan_fwd(ScanInputs(x=x, dt=dt, b=b, c=c), abar, bbar)
        drive = np.max(np.abs(bbar * x[:, :, None]))
        bound = drive / (1.0 - np.max(abar))
        assert np.max(np.abs(out.hidden)) <= bound + 1e-12


class TestScanBackward:
    def test_zero_upstream_gives_zero_grads(self):
        rng = np.random.default_rng(11)
        x, dt, a, b, c = random_case(rng, 5, 2, 3)
        params = SSMParams(a_log=Tensor(np.log(-a)), d_skip=Tensor(np.ones(2)))
        abar, bbar = discretize(dt, a, b)
        inputs = ScanInputs(x=x, dt=dt, b=b, c=c)
        out = selective_scan_fwd(inputs, abar, bbar, params.d_skip.data)
        grads = selective_scan_bwd(inputs, params, out, abar, bbar,
                                   np.zeros_like(out.y))
        for g in (grads.x, grads.dt, grads.b, grads.c, grads.a_log, grads.d_skip):
            npt.assert_array_equal(g, 0.0)

    def test_c_grad_closed_form(self):
        # y_t = <c_t, h_t>  =>  d y_t / d c_t = h_t, scaled by upstream.
        rng = np.random.default_rng(12)
        x, dt, a, b, c = random_case(rng, 4, 2, 3)
        params = SSMParams(a_log=Tensor(np.log(-a)), d_skip=None)
        abar, bbar = discretize(dt, a, b)
        inputs = ScanInputs(x=x, dt=dt, b=b, c=c)
        out = selective_scan_fwd(inputs, abar, bbar)
        dy = rng.standard_normal(out.y.shape)
        grads = selective_scan_bwd(inputs, params, out, abar, bbar, dy)
        npt.assert_allclose(grads.c, np.einsum("td,tdn->tn", dy, out.hidden),
                            atol=1e-12)

    @pytest.mark.parametrize("scan_mode", ["sequential", "associative"])
    @pytest.mark.parametrize("exact", [True, False])
    def test_all_grads_match_finite_differences(self, scan_mode, exact):
        rng = np.random.default_rng(13)
        length, d_inner, n_state = 6, 2, 3
        x = rng.standard_normal((length, d_inner))
        dt_pre = rng.standard_normal((length, d_inner))
        b = rng.standard_normal((length, n_state))
        c = rng.standard_normal((length, n_state))
        params = init_ssm_params(d_inner, n_state)
        proj = rng.standard_normal((length, d_inner))

        def f():
            dt, _ = ops.softplus(dt_pre)
            y, _ = ssm_apply(x, dt, b, c, params, exact=exact, scan_mode=scan_mode)
            return float((y * proj).sum())

        dt, bwd_sp = ops.softplus(dt_pre)
        _, bwd = ssm_apply(x, dt, b, c, params, exact=exact, scan_mode=scan_mode)
        grads = bwd(proj)
        (ddt_pre,) = bwd_sp(grads.dt)
        arrays = [x, dt_pre, b, c, params.a_log.data, params.d_skip.data]
        analytic = [grads.x, ddt_pre, grads.b, grads.c, grads.a_log, grads.d_skip]
        assert ops.grad_check(f, arrays, analytic) < 1e-5


def test_trace_dump(tmp_path):
    rng = np.random.default_rng(14)
    x, dt, a, b, c = random_case(rng, 3, 2, 2)
    abar, bbar = discretize(dt, a, b)
    out = selective_scan_fwd(ScanInputs(x=x, dt=dt, b=b, c=c), abar, bbar)
    path = tmp_path / "trace.csv"
    dump_scan_trace(out, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "t,channel,state_norm,y"
    assert len(lines) == 1 + 3 * 2
