import numpy as np
import pytest

from smoothrl import autodiff as ad
from helpers import finite_diff_grad, finite_diff_jacobian, max_rel_err, naive_matmul


def test_matmul_identity():
    out = ad.matmul(ad.constant([[1.0, 0.0], [0.0, 1.0]]), ad.constant([[2.0], [3.0]]))
    assert np.array_equal(out.data, [[2.0], [3.0]])


def test_matmul_hand_arithmetic():
    out = ad.matmul(ad.constant([[1.0, 2.0]]), ad.constant([[3.0], [4.0]]))
    assert np.array_equal(out.data, [[11.0]])


def test_matmul_matches_naive_oracle():
    rng = np.random.default_rng(7)
    a = rng.uniform(-2, 2, (3, 4))
    b = rng.uniform(-2, 2, (4, 2))
    out = ad.matmul(ad.constant(a), ad.constant(b))
    assert np.max(np.abs(out.data - naive_matmul(a, b))) < 1e-12


def test_matmul_shape_mismatch_reports_both_shapes():
    with pytest.raises(ad.DimensionError, match=r"\(2, 3\).*\(2, 2\)"):
        ad.matmul(ad.constant(np.zeros((2, 3))), ad.constant(np.zeros((2, 2))))


def test_activation_pinned_values():
    assert ad.softplus(ad.constant(0.0)).data == pytest.approx(0.6931471805599453, abs=1e-15)
    assert ad.tanh(ad.constant(0.0)).data == 0.0
    assert ad.elu(ad.constant(-1.0)).data == pytest.approx(np.exp(-1.0) - 1.0, abs=1e-15)


def test_softplus_overflow_safe():
    out = ad.softplus(ad.constant([800.0, -800.0]))
    assert out.data[0] == pytest.approx(800.0)
    assert out.data[1] == 0.0


def test_grad_square():
    with ad.tape():
        x = ad.tensor(3.0, requires_grad=True)
        (g,) = ad.grad(ad.mul(x, x), [x])
    assert g.data == 6.0


def test_grad_of_grad_cubic():
    # grad of x^3 is 3x^2 = 12 at x=2; its derivative 6x is also 12 there
    with ad.tape():
        x = ad.tensor(2.0, requires_grad=True)
        y = ad.mul(ad.mul(x, x), x)
        (g,) = ad.grad(y, [x], create_graph=True)
        assert g.data == 12.0
        (g2,) = ad.grad(g, [x])
    assert g2.data == 12.0


def test_grad_disconnected_input_is_zero():
    with ad.tape():
        x = ad.tensor([1.0, 2.0], requires_grad=True)
        z = ad.tensor([3.0, 4.0], requires_grad=True)
        (gz,) = ad.grad(ad.tsum(ad.mul(x, x)), [z])
    assert np.array_equal(gz.data, np.zeros(2))


def test_grad_rejects_nonscalar_output():
    with ad.tape():
        x = ad.tensor([1.0, 2.0], requires_grad=True)
        y = ad.mul(x, x)
        with pytest.raises(ad.GradError):
            ad.grad(y, [x])


def test_grad_rejects_input_without_grad():
    with ad.tape():
        x = ad.tensor([1.0], requires_grad=True)
        c = ad.constant([2.0])
        y = ad.tsum(ad.mul(x, c))
        with pytest.raises(ad.GradError):
            ad.grad(y, [c])


def test_nonfinite_surfaces_as_error():
    with pytest.raises(ad.NonFiniteError):
        ad.log(ad.constant(-1.0))
    with pytest.raises(ad.NonFiniteError):
        ad.div(ad.constant(1.0), ad.constant(0.0))


def _mlp_scalar(params, x, activation):
    """Tiny two-layer network ending in a scalar, built from taped ops."""
    w1, b1, w2, b2 = params
    h = ad.activation(ad.add(ad.matmul(x, w1), b1), activation)
    out = ad.add(ad.matmul(h, w2), b2)
    return ad.tsum(out)


@pytest.mark.parametrize("activation", ["tanh", "elu", "softplus"])
def test_mlp_gradcheck_against_finite_differences(activation):
    rng = np.random.default_rng(11)
    arrays = [
        rng.uniform(-2, 2, (3, 5)),
        rng.uniform(-2, 2, (5,)),
        rng.uniform(-2, 2, (5, 2)),
        rng.uniform(-2, 2, (2,)),
    ]
    x_data = rng.uniform(-2, 2, (4, 3))

    def run(arrs):
        with ad.tape():
            params = [ad.tensor(a, requires_grad=True) for a in arrs]
            return _mlp_scalar(params, ad.constant(x_data), activation).item()

    with ad.tape():
        params = [ad.tensor(a, requires_grad=True) for a in arrays]
        loss = _mlp_scalar(params, ad.constant(x_data), activation)
        grads = ad.grad(loss, params)

    for i, g in enumerate(grads):
        def f(a, i=i):
            arrs = [np.array(p) for p in arrays]
            arrs[i] = a
            return run(arrs)

        fd = finite_diff_grad(f, arrays[i])
        assert max_rel_err(g.data, fd) < 1e-4


_UNARY_OPS = [
    ("tanh", ad.tanh, None),
    ("elu", ad.elu, None),
    ("softplus", ad.softplus, None),
    ("sigmoid", ad.sigmoid, None),
    ("exp", ad.exp, None),
    ("log", ad.log, "positive"),
    ("sqrt", ad.sqrt, "positive"),
    ("abs", ad.absolute, "offzero"),
    ("neg", ad.neg, None),
    ("square", ad.square, None),
    ("clip", lambda t: ad.clip(t, -1.0, 1.0), "offclip"),
]


@pytest.mark.parametrize("name,op,domain", _UNARY_OPS, ids=[o[0] for o in _UNARY_OPS])
def test_unary_op_gradcheck(name, op, domain):
    rng = np.random.default_rng(hash(name) % 2**32)
    x = rng.uniform(-2, 2, (3, 4))
    if domain == "positive":
        x = np.abs(x) + 0.5
    elif domain == "offzero":
        x = np.where(np.abs(x) < 0.2, x + 0.5, x)
    elif domain == "offclip":
        x = np.where(np.abs(np.abs(x) - 1.0) < 0.1, x * 0.5, x)

    def f(a):
        with ad.tape():
            t = ad.tensor(a, requires_grad=True)
            return ad.tsum(op(t)).item()

    with ad.tape():
        t = ad.tensor(x, requires_grad=True)
        (g,) = ad.grad(ad.tsum(op(t)), [t])
    assert max_rel_err(g.data, finite_diff_grad(f, x)) < 1e-4


_BINARY_OPS = [
    ("add", ad.add), ("sub", ad.sub), ("mul", ad.mul), ("div", ad.div),
    ("matmul", ad.matmul), ("maximum", ad.maximum), ("minimum", ad.minimum),
]


@pytest.mark.parametrize("name,op", _BINARY_OPS, ids=[o[0] for o in _BINARY_OPS])
def test_binary_op_gradcheck(name, op):
    rng = np.random.default_rng(hash(name) % 2**32)
    a = rng.uniform(-2, 2, (3, 3))
    b = rng.uniform(0.5, 2, (3, 3))  # away from division-by-zero and ties

    def f_a(x):
        with ad.tape():
            ta = ad.tensor(x, requires_grad=True)
            return ad.tsum(op(ta, ad.constant(b))).item()

    def f_b(x):
        with ad.tape():
            tb = ad.tensor(x, requires_grad=True)
            return ad.tsum(op(ad.constant(a), tb)).item()

    with ad.tape():
        ta = ad.tensor(a, requires_grad=True)
        tb = ad.tensor(b, requires_grad=True)
        ga, gb = ad.grad(ad.tsum(op(ta, tb)), [ta, tb])
    assert max_rel_err(ga.data, finite_diff_grad(f_a, a)) < 1e-4
    assert max_rel_err(gb.data, finite_diff_grad(f_b, b)) < 1e-4


def test_broadcast_add_bias_gradcheck():
    rng = np.random.default_rng(5)
    a = rng.uniform(-2, 2, (4, 3))
    b = rng.uniform(-2, 2, (3,))

    def f(bias):
        with ad.tape():
            tb = ad.tensor(bias, requires_grad=True)
            return ad.tsum(ad.mul(ad.add(ad.constant(a), tb), ad.constant(a))).item()

    with ad.tape():
        tb = ad.tensor(b, requires_grad=True)
        (gb,) = ad.grad(ad.tsum(ad.mul(ad.add(ad.constant(a), tb), ad.constant(a))), [tb])
    assert max_rel_err(gb.data, finite_diff_grad(f, b)) < 1e-4


def test_concat_narrow_gradcheck():
    rng = np.random.default_rng(6)
    a = rng.uniform(-2, 2, (2, 3))

    def f(x):
        with ad.tape():
            t = ad.tensor(x, requires_grad=True)
            joined = ad.concat([t, ad.mul(t, 2.0)], axis=1)
            return ad.tsum(ad.mul(ad.narrow(joined, 1, 2, 3), 1.5)).item()

    with ad.tape():
        t = ad.tensor(a, requires_grad=True)
        joined = ad.concat([t, ad.mul(t, 2.0)], axis=1)
        (g,) = ad.grad(ad.tsum(ad.mul(ad.narrow(joined, 1, 2, 3), 1.5)), [t])
    assert max_rel_err(g.data, finite_diff_grad(f, a)) < 1e-4


def test_jacobian_norm_diagonal_matrix():
    a = np.array([[3.0, 0.0], [0.0, 1.0]])
    with ad.tape():
        norm = ad.jacobian_2norm(lambda x: ad.matmul(x, ad.constant(a.T)), ad.constant([1.0, 1.0]))
        assert norm.data[0, 0] == pytest.approx(3.0, abs=1e-9)


def test_jacobian_norm_identity():
    with ad.tape():
        norm = ad.jacobian_2norm(lambda x: x, ad.constant([0.3, -0.7, 1.1]))
        assert norm.data[0, 0] == pytest.approx(1.0, abs=1e-12)


def test_jacobian_norm_zero_map():
    with ad.tape():
        norm = ad.jacobian_2norm(lambda x: ad.mul(x, 0.0), ad.constant([1.0, 2.0]))
        assert abs(norm.data[0, 0]) < 1e-9


def _random_net(rng, n_in, width, n_out):
    return [
        rng.uniform(-1, 1, (n_in, width)),
        rng.uniform(-1, 1, (width,)),
        rng.uniform(-1, 1, (width, n_out)),
        rng.uniform(-1, 1, (n_out,)),
    ]


def _net_forward(params, x):
    w1, b1, w2, b2 = params
    h = ad.tanh(ad.add(ad.matmul(x, w1), b1))
    return ad.add(ad.matmul(h, w2), b2)


def test_jacobian_norm_matches_fd_svd_oracle():
    rng = np.random.default_rng(21)
    for _ in range(5):
        params = [ad.constant(p) for p in _random_net(rng, 4, 6, 3)]
        x0 = rng.uniform(-1, 1, 4)

        def f_np(x):
            h = np.tanh(x @ params[0].data + params[1].data)
            return h @ params[2].data + params[3].data

        jac = finite_diff_jacobian(f_np, x0)
        expected = np.linalg.svd(jac, compute_uv=False)[0]
        with ad.tape():
            norm = ad.jacobian_2norm(lambda x: _net_forward(params, x), ad.constant(x0))
        assert norm.data[0, 0] == pytest.approx(expected, rel=1e-3, abs=1e-3)


def test_jacobian_norm_batched_matches_per_sample():
    rng = np.random.default_rng(22)
    params = [ad.constant(p) for p in _random_net(rng, 3, 5, 2)]
    xs = rng.uniform(-1, 1, (4, 3))
    with ad.tape():
        batched = ad.jacobian_2norm(lambda x: _net_forward(params, x), ad.constant(xs))
    singles = []
    for row in xs:
        with ad.tape():
            singles.append(
                ad.jacobian_2norm(lambda x: _net_forward(params, x), ad.constant(row)).data[0, 0]
            )
    assert np.allclose(batched.data[:, 0], singles, rtol=1e-12, atol=1e-12)


def test_double_backprop_grad_norm_matches_fd():
    # g(theta) = ||grad_x f(x)||^2 must differentiate correctly w.r.t. theta
    rng = np.random.default_rng(33)
    arrays = _random_net(rng, 3, 6, 1)
    x0 = rng.uniform(-1, 1, (1, 3))

    def loss_value(arrs):
        with ad.tape():
            params = [ad.tensor(a, requires_grad=True) for a in arrs]
            x = ad.tensor(x0, requires_grad=True)
            y = ad.tsum(_net_forward(params, x))
            (gx,) = ad.grad(y, [x], create_graph=True)
            return ad.tsum(ad.mul(gx, gx)).item()

    with ad.tape():
        params = [ad.tensor(a, requires_grad=True) for a in arrays]
        x = ad.tensor(x0, requires_grad=True)
        y = ad.tsum(_net_forward(params, x))
        (gx,) = ad.grad(y, [x], create_graph=True)
        loss = ad.tsum(ad.mul(gx, gx))
        grads = ad.grad(loss, params)

    for i, g in enumerate(grads):
        def f(a, i=i):
            arrs = [np.array(p) for p in arrays]
            arrs[i] = a
            return loss_value(arrs)

        fd = finite_diff_grad(f, arrays[i])
        assert max_rel_err(g.data, fd) < 1e-3


def test_tape_replay_is_deterministic():
    def run():
        rng = np.random.default_rng(99)
        arrays = _random_net(rng, 3, 4, 2)
        x = rng.uniform(-1, 1, (5, 3))
        with ad.tape():
            params = [ad.tensor(a, requires_grad=True) for a in arrays]
            loss = ad.tsum(ad.square(_net_forward(params, ad.constant(x))))
            return [g.data for g in ad.grad(loss, params)]

    first, second = run(), run()
    for a, b in zip(first, second):
        assert np.array_equal(a, b)


def test_grad_create_graph_requires_active_tape():
    with ad.tape():
        x = ad.tensor(1.0, requires_grad=True)
        y = ad.mul(x, x)
    with pytest.raises(ad.GradError):
        ad.grad(y, [x], create_graph=True)
