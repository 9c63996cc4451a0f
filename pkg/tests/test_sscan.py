"""Scan oracle equivalence, selective parameterization, multi-head behavior."""

import numpy as np
import pytest

from curvescan.autodiff import Tensor, grad
from curvescan.gradcheck import check_gradients
from curvescan.ops import flip
from curvescan.scan import (
    ScanParams,
    combine,
    linear_recurrence,
    scan_chunked,
    selective_scan_par,
    selective_scan_seq,
)
from curvescan.ssm import (
    HeadConfig,
    SSMParams,
    bidirectional,
    discretize,
    init_head_params,
    init_ssm_params,
    mhs6_forward,
    s6_forward,
)


def random_scan_params(L, d, n, seed):
    rng = np.random.default_rng(seed)
    return ScanParams(
        a_bar=rng.uniform(0.01, 0.99, size=(L, d, n)),
        bx_bar=rng.standard_normal((L, d, n)),
        c=rng.standard_normal((L, n)),
    )


def test_seq_scan_frozen_example():
    p = ScanParams(
        a_bar=np.array([[[0.5]], [[0.5]]]),
        bx_bar=np.array([[[1.0]], [[1.0]]]),
        c=np.array([[1.0], [1.0]]),
    )
    np.testing.assert_allclose(selective_scan_seq(p).ravel(), [1.0, 1.5])


def test_seq_scan_memoryless_when_a_zero():
    p = random_scan_params(6, 2, 3, 0)
    p.a_bar[:] = 0.0
    y = selective_scan_seq(p)
    expected = np.einsum("lcn,ln->lc", p.bx_bar, p.c)
    np.testing.assert_array_equal(y, expected)


def test_seq_scan_matches_independent_loop():
    p = random_scan_params(256, 4, 8, 1)
    y = selective_scan_seq(p)
    # naive triple loop, written without reference to the kernel
    L, d, n = p.a_bar.shape
    h = np.zeros((d, n))
    ref = np.zeros((L, d))
    for t in range(L):
        for c in range(d):
            for k in range(n):
                h[c, k] = p.a_bar[t, c, k] * h[c, k] + p.bx_bar[t, c, k]
                ref[t, c] += p.c[t, k] * h[c, k]
    np.testing.assert_allclose(y, ref, rtol=1e-12)


def test_par_equals_seq_small_grid():
    for L in (1, 2, 37, 256):
        p = random_scan_params(L, 3, 4, L)
        ref = selective_scan_seq(p)
        for chunk in (1, 7, 64, L):
            got = selective_scan_par(p, chunk=chunk)
            np.testing.assert_allclose(got, ref, rtol=1e-10, atol=1e-12)
            if chunk >= L:
                np.testing.assert_array_equal(got, ref)


def test_par_independent_of_worker_count():
    p = random_scan_params(300, 4, 4, 9)
    base = selective_scan_par(p, chunk=16, threads=1)
    for threads in (2, 3, 8):
        np.testing.assert_array_equal(selective_scan_par(p, chunk=16, threads=threads), base)


def test_combine_associativity():
    rng = np.random.default_rng(2)
    for _ in range(50):
        p, q, r = [(rng.standard_normal(5), rng.standard_normal(5)) for _ in range(3)]
        left = combine(combine(p, q), r)
        right = combine(p, combine(q, r))
        np.testing.assert_allclose(left[0], right[0], atol=1e-12)
        np.testing.assert_allclose(left[1], right[1], atol=1e-12)


def test_state_magnitude_bound():
    rng = np.random.default_rng(3)
    a = rng.uniform(0.01, 0.95, size=(200, 3, 4))
    b = rng.standard_normal((200, 3, 4))
    h = scan_chunked(a, b, chunk=None)
    bound = np.abs(b).max() / (1.0 - a.max())
    assert np.abs(h).max() <= bound + 1e-12


def test_scan_params_validation():
    with pytest.raises(ValueError, match=r"\(L, d, N\)"):
        ScanParams(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((2, 2)))
    with pytest.raises(ValueError, match="must match"):
        ScanParams(np.zeros((2, 2, 2)), np.zeros((2, 2, 3)), np.zeros((2, 2)))
    with pytest.raises(ValueError, match="c must be"):
        ScanParams(np.zeros((2, 2, 2)), np.zeros((2, 2, 2)), np.zeros((2, 3)))
    with pytest.raises(ValueError, match="chunk"):
        selective_scan_par(random_scan_params(4, 1, 1, 0), chunk=0)


def test_scan_gradient_chunked_matches_sequential():
    rng = np.random.default_rng(4)
    a_data = rng.uniform(0.1, 0.9, (40, 2, 3))
    b_data = rng.standard_normal((40, 2, 3))

    def grads(chunk, threads=1):
        a = Tensor(a_data.copy(), requires_grad=True)
        b = Tensor(b_data.copy(), requires_grad=True)
        h = linear_recurrence(a, b, chunk=chunk, threads=threads)
        loss = (h * h).data.sum()  # direct seed via backward on h
        h.backward(2.0 * h.data)
        return a.grad, b.grad, loss

    ga_ref, gb_ref, _ = grads(chunk=None)
    for chunk in (1, 7, 16):
        ga, gb, _ = grads(chunk=chunk)
        np.testing.assert_allclose(ga, ga_ref, rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose(gb, gb_ref, rtol=1e-9, atol=1e-12)
    ga_t, gb_t, _ = grads(chunk=7, threads=4)
    ga_1, gb_1, _ = grads(chunk=7, threads=1)
    np.testing.assert_array_equal(ga_t, ga_1)
    np.testing.assert_array_equal(gb_t, gb_1)


def test_discretize_frozen_examples():
    a = np.array([[-1.0]])
    b = np.array([[1.0]])
    delta = np.array([[np.log(2.0)]])
    a_bar, b_bar = discretize(a, b, delta, mode="euler")
    assert a_bar.item() == pytest.approx(0.5, abs=1e-15)
    assert b_bar.item() == pytest.approx(np.log(2.0), abs=1e-15)
    a_bar2, b_bar2 = discretize(a, b, delta, mode="exact")
    assert a_bar2.item() == pytest.approx(0.5, abs=1e-15)
    assert b_bar2.item() == pytest.approx(0.5, abs=1e-15)


def test_discretize_exact_euler_taylor_bound():
    rng = np.random.default_rng(5)
    a = -rng.uniform(0.1, 2.0, size=(3, 4))
    b = rng.standard_normal((6, 4))
    delta = np.full((6, 3), 1e-3)
    _, be = discretize(a, b, delta, mode="euler")
    _, bx = discretize(a, b, delta, mode="exact")
    diff = np.abs(be.data - bx.data)
    bound = delta[:, :, None] * np.abs(a)[None] * np.abs(b)[:, None, :] * delta[:, :, None]
    # |exact - euler| = |B| * |e^{dA} - 1 - dA| / |A| <= d^2 |A| |B| / 2 < d |A| |B| * d
    assert np.all(diff <= bound + 1e-15)


def test_discretize_contract_errors():
    with pytest.raises(ValueError, match="delta > 0"):
        discretize(np.array([[-1.0]]), np.array([[1.0]]), np.array([[0.0]]))
    with pytest.raises(ValueError, match="A < 0"):
        discretize(np.array([[1.0]]), np.array([[1.0]]), np.array([[0.5]]))
    with pytest.raises(ValueError, match="mode"):
        discretize(np.array([[-1.0]]), np.array([[1.0]]), np.array([[0.5]]), mode="midpoint")


def test_head_config_validation():
    with pytest.raises(ValueError, match="divide"):
        HeadConfig(num_heads=5, model_dim=12, state_dim=4)
    with pytest.raises(ValueError, match="positive"):
        HeadConfig(num_heads=0, model_dim=12, state_dim=4)
    assert HeadConfig(3, 12, 4).head_dim == 4


def test_s6_zero_input_gives_zero_output():
    params = init_ssm_params(5, 3, np.random.default_rng(6))
    y = s6_forward(Tensor(np.zeros((7, 5))), params)
    np.testing.assert_array_equal(y.data, np.zeros((7, 5)))


def test_s6_causality_exact():
    params = init_ssm_params(4, 3, np.random.default_rng(7))
    rng = np.random.default_rng(8)
    x = rng.standard_normal((20, 4))
    x2 = x.copy()
    x2[13] += 1.0
    y1 = s6_forward(Tensor(x), params).data
    y2 = s6_forward(Tensor(x2), params).data
    np.testing.assert_array_equal(y1[:13], y2[:13])
    assert not np.allclose(y1[13:], y2[13:])


def test_s6_gradient_fd():
    params = init_ssm_params(3, 2, np.random.default_rng(9))
    x = Tensor(np.random.default_rng(10).standard_normal((6, 3)), requires_grad=True)
    inputs = {"x": x, **dict(params.named_tensors())}
    report = check_gradients(lambda **kw: s6_forward(kw.pop("x"), SSMParams(**kw)), inputs, name="s6")
    assert report.passed, str(report)


def test_s6_exact_mode_gradient_fd():
    params = init_ssm_params(2, 2, np.random.default_rng(11))
    x = Tensor(np.random.default_rng(12).standard_normal((5, 2)), requires_grad=True)
    inputs = {"x": x, **dict(params.named_tensors())}
    report = check_gradients(
        lambda **kw: s6_forward(kw.pop("x"), SSMParams(**kw), mode="exact"), inputs, name="s6_exact"
    )
    assert report.passed, str(report)


def test_mhs6_single_head_bit_identical_to_s6():
    params = init_ssm_params(10, 4, np.random.default_rng(13))
    x = Tensor(np.random.default_rng(14).standard_normal((33, 10)))
    y_one = s6_forward(x, params)
    y_multi = mhs6_forward(x, HeadConfig(1, 10, 4), [params])
    np.testing.assert_array_equal(y_one.data, y_multi.data)


def test_mhs6_matches_per_head_s6_slices():
    cfg = HeadConfig(num_heads=4, model_dim=12, state_dim=3)
    heads = init_head_params(cfg, np.random.default_rng(15))
    x = np.random.default_rng(16).standard_normal((21, 12))
    fused = mhs6_forward(Tensor(x), cfg, heads).data
    x3 = x.reshape(21, 4, 3)
    per_head = np.stack(
        [s6_forward(Tensor(x3[:, i]), heads[i]).data for i in range(4)], axis=1
    ).reshape(21, 12)
    np.testing.assert_array_equal(fused, per_head)


def test_mhs6_head_isolation():
    cfg = HeadConfig(num_heads=3, model_dim=9, state_dim=4)
    heads = init_head_params(cfg, np.random.default_rng(17))
    rng = np.random.default_rng(18)
    x = rng.standard_normal((15, 9))
    base = mhs6_forward(Tensor(x), cfg, heads).data
    for i in range(3):
        xp = x.copy()
        xp[:, 3 * i : 3 * (i + 1)] += rng.standard_normal((15, 3))
        out = mhs6_forward(Tensor(xp), cfg, heads).data
        changed = np.any(out != base, axis=0)
        expected = np.zeros(9, dtype=bool)
        expected[3 * i : 3 * (i + 1)] = True
        # only head i's channel block may move
        assert np.array_equal(changed, expected) or np.array_equal(changed & ~expected, np.zeros(9, bool))
        assert changed[3 * i : 3 * (i + 1)].any()


def test_mhs6_shape_and_gradient():
    cfg = HeadConfig(num_heads=2, model_dim=6, state_dim=2)
    heads = init_head_params(cfg, np.random.default_rng(19))
    x = Tensor(np.random.default_rng(20).standard_normal((8, 6)), requires_grad=True)
    y = mhs6_forward(x, cfg, heads)
    assert y.shape == (8, 6)
    inputs = {"x": x}
    for i, hp in enumerate(heads):
        inputs.update(dict(hp.named_tensors(prefix=f"h{i}_")))

    def run(**kw):
        xx = kw.pop("x")
        hp = [
            SSMParams(**{k.split("_", 1)[1]: v for k, v in kw.items() if k.startswith(f"h{i}_")})
            for i in range(2)
        ]
        return mhs6_forward(xx, cfg, hp)

    report = check_gradients(run, inputs, name="mhs6")
    assert report.passed, str(report)


def test_mhs6_validation():
    cfg = HeadConfig(num_heads=2, model_dim=6, state_dim=2)
    heads = init_head_params(cfg, np.random.default_rng(21))
    with pytest.raises(ValueError, match="per-head params"):
        mhs6_forward(Tensor(np.zeros((4, 6))), cfg, heads[:1])
    with pytest.raises(ValueError, match=r"x must be \(L, 6\)"):
        mhs6_forward(Tensor(np.zeros((4, 5))), cfg, heads)
    bad = init_ssm_params(4, 2, np.random.default_rng(22))
    with pytest.raises(ValueError, match="config wants"):
        mhs6_forward(Tensor(np.zeros((4, 6))), cfg, [heads[0], bad])


def test_bidirectional_backward_branch_definition():
    params_f = init_ssm_params(4, 3, np.random.default_rng(23))
    params_b = init_ssm_params(4, 3, np.random.default_rng(24))
    x = Tensor(np.random.default_rng(25).standard_normal((10, 4)))
    y = bidirectional(x, params_f, params_b)
    fwd = s6_forward(x, params_f).data
    bwd = np.flip(s6_forward(Tensor(np.flip(x.data, 0).copy()), params_b).data, 0)
    np.testing.assert_allclose(y.data, fwd + bwd, rtol=1e-15)


def test_bidirectional_global_receptive_field():
    cfg = HeadConfig(2, 8, 3)
    f = init_head_params(cfg, np.random.default_rng(26))
    b = init_head_params(cfg, np.random.default_rng(27))
    rng = np.random.default_rng(28)
    x = rng.standard_normal((14, 8))
    base = bidirectional(Tensor(x), f, b, cfg=cfg).data
    for t in (0, 7, 13):
        xp = x.copy()
        xp[t] += 0.25
        out = bidirectional(Tensor(xp), f, b, cfg=cfg).data
        assert np.all(np.any(out != base, axis=1)), f"position {t} did not reach all outputs"


def test_bidirectional_palindrome_symmetry():
    params = init_ssm_params(3, 2, np.random.default_rng(29))
    rng = np.random.default_rng(30)
    half = rng.standard_normal((6, 3))
    x = np.concatenate([half, half[::-1]], axis=0)
    y = bidirectional(Tensor(x), params, params).data
    np.testing.assert_allclose(y, y[::-1], rtol=1e-12, atol=1e-14)


def test_bidirectional_gradient_fd():
    pf = init_ssm_params(3, 2, np.random.default_rng(31))
    pb = init_ssm_params(3, 2, np.random.default_rng(32))
    x = Tensor(np.random.default_rng(33).standard_normal((5, 3)), requires_grad=True)
    inputs = {"x": x}
    inputs.update(dict(pf.named_tensors("f_")))
    inputs.update(dict(pb.named_tensors("b_")))

    def run(**kw):
        xx = kw.pop("x")
        f = SSMParams(**{k[2:]: v for k, v in kw.items() if k.startswith("f_")})
        b = SSMParams(**{k[2:]: v for k, v in kw.items() if k.startswith("b_")})
        return bidirectional(xx, f, b)

    report = check_gradients(run, inputs, name="bidirectional")
    assert report.passed, str(report)
