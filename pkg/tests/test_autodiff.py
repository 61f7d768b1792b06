import numpy as np
import pytest

from specnode import autodiff as ad
from specnode.autodiff import Tape, Tensor


def _param(data):
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def test_hadamard_examples():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    out = ad.hadamard(a, np.array([[2.0, 0.0], [1.0, 1.0]]))
    np.testing.assert_array_equal(out.data, [[2, 0], [3, 4]])
    np.testing.assert_array_equal(ad.hadamard(a, np.ones_like(a)).data, a)


def test_hadamard_gradient_is_other_operand():
    rng = np.random.default_rng(0)
    a = _param(rng.uniform(-1, 1, (3, 4)))
    b = rng.uniform(-1, 1, (3, 4))
    with Tape() as tape:
        loss = ad.tsum(ad.hadamard(a, b))
    g = ad.backward(loss, tape)[a]
    np.testing.assert_allclose(g, b, rtol=0, atol=1e-14)
    assert ad.grad_check(lambda p: ad.tsum(ad.hadamard(p, b)), a, h=1e-6) < 1e-6


def test_hadamard_shape_mismatch():
    with pytest.raises(ad.ShapeError):
        ad.hadamard(np.ones((2, 3)), np.ones((3, 2)))


def test_trailing_suffix_broadcast_only():
    out = ad.add(np.ones((4, 2, 3)), np.arange(6.0).reshape(2, 3))
    assert out.shape == (4, 2, 3)
    with pytest.raises(ad.ShapeError):
        ad.add(np.ones((4, 2, 3)), np.ones((2, 1)))


def test_matmul_rowwise_examples():
    x = np.random.default_rng(1).normal(size=(3, 4))
    np.testing.assert_array_equal(ad.matmul_rowwise(x, np.eye(4)).data, x)
    perm = np.array([[0.0, 1.0], [1.0, 0.0]])
    np.testing.assert_array_equal(ad.matmul_rowwise(np.eye(2), perm).data, perm)
    with pytest.raises(ad.ShapeError):
        ad.matmul_rowwise(np.ones((2, 3)), np.eye(4))


def test_matmul_rowwise_gradient_wrt_matrix():
    rng = np.random.default_rng(2)
    x = rng.uniform(-1, 1, (5, 3))
    B = _param(rng.uniform(-1, 1, (3, 3)))
    with Tape() as tape:
        loss = ad.tsum(ad.matmul_rowwise(x, B))
    g = ad.backward(loss, tape)[B]
    np.testing.assert_allclose(g, x.T @ np.ones((5, 3)), atol=1e-14)
    assert ad.grad_check(lambda p: ad.tsum(ad.matmul_rowwise(x, p)), B) < 1e-6


def test_matmul_rowwise_batched():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(2, 5, 3))
    B = rng.normal(size=(3, 3))
    np.testing.assert_allclose(ad.matmul_rowwise(x, B).data, x @ B)


def test_activation_values():
    np.testing.assert_array_equal(ad.activation(np.array([-1.0, 0.0, 2.0]), "relu").data, [0, 0, 2])
    assert ad.activation(np.array(0.0), "sigmoid").item() == 0.5
    x = _param([0.0])
    with Tape() as tape:
        y = ad.tsum(ad.activation(x, "tanh"))
    assert ad.backward(y, tape)[x][0] == 1.0
    with pytest.raises(ValueError):
        ad.activation(np.ones(2), "gelu")


@pytest.mark.parametrize("kind", ["tanh", "sin", "sigmoid", "identity", "relu"])
def test_activation_gradients(kind):
    rng = np.random.default_rng(4)
    data = rng.uniform(-1, 1, 12)
    data[np.abs(data) < 0.05] = 0.5  # keep relu away from its kink
    x = _param(data)
    assert ad.grad_check(lambda p: ad.tsum(ad.power(ad.activation(p, kind), 2)), x) < 1e-6


PRIMITIVES = {
    "add": lambda p, c: ad.add(p, c),
    "sub": lambda p, c: ad.sub(c, p),
    "mul": lambda p, c: ad.mul(p, c),
    "div": lambda p, c: ad.div(c, ad.add(p, 2.0)),
    "matmul": lambda p, c: ad.matmul(p, ad.transpose(c)),
    "power": lambda p, c: ad.power(ad.add(p, 2.0), 3),
    "exp": lambda p, c: ad.exp(p),
    "cos": lambda p, c: ad.cos(p),
    "swapaxes": lambda p, c: ad.mul(ad.swapaxes(p, 0, 1), ad.transpose(c)),
    "reshape": lambda p, c: ad.mul(ad.reshape(p, (12,)), ad.reshape(c, (12,))),
    "getitem": lambda p, c: ad.mul(p[1:, ::2], c[1:, ::2]),
    "fancy": lambda p, c: ad.mul(ad.getitem(p, (np.array([0, 0, 2]),)), c[:3]),
    "take": lambda p, c: ad.take(p, [3, 0, 0, 1], axis=1),
    "stack": lambda p, c: ad.mul(ad.stack([p, c], axis=1), ad.stack([c, p], axis=1)),
    "concat": lambda p, c: ad.concatenate([p, ad.mul(p, c)], axis=1),
    "mean": lambda p, c: ad.mean(ad.mul(p, c), axis=0),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients(name):
    rng = np.random.default_rng(sorted(PRIMITIVES).index(name))
    p = _param(rng.uniform(-1, 1, (3, 4)))
    c = rng.uniform(-1, 1, (3, 4))
    w = None

    def f(x):
        nonlocal w
        out = PRIMITIVES[name](x, c)
        if w is None:
            w = rng.uniform(-1, 1, out.shape)
        return ad.tsum(ad.mul(out, w))

    assert ad.grad_check(f, p) < 1e-6


def test_backward_examples():
    x = _param([1.0, 2.0, 3.0])
    with Tape() as tape:
        loss = ad.tsum(ad.hadamard(x, x))
    np.testing.assert_allclose(ad.backward(loss, tape)[x], [2, 4, 6])

    with Tape() as tape:
        const = ad.tsum(Tensor(np.ones(3)))
    grads = ad.backward(const, tape, params=[x])
    np.testing.assert_array_equal(grads[x], np.zeros(3))


def test_backward_errors():
    x = _param([1.0, 2.0])
    with Tape() as tape:
        y = ad.mul(x, 2.0)
    with pytest.raises(ad.TapeError):
        ad.backward(y, tape)
    with pytest.raises(ad.TapeError):
        ad.backward(ad.tsum(Tensor(np.ones(2))), Tape())


def _mlp(rng, widths=(5, 8, 8, 3)):
    params = []
    for a, b in zip(widths[:-1], widths[1:]):
        params.append(_param(rng.uniform(-1, 1, (a, b))))
        params.append(_param(rng.uniform(-1, 1, b)))
    return params


def _mlp_loss(params, x):
    h = x
    for i in range(0, len(params), 2):
        h = ad.add(ad.matmul(h, params[i]), params[i + 1])
        if i + 2 < len(params):
            h = ad.tanh(h)
    return ad.tsum(ad.power(h, 2))


def test_mlp_gradient_matches_central_differences():
    rng = np.random.default_rng(5)
    params = _mlp(rng)
    x = rng.uniform(-1, 1, (4, 5))
    for k, p in enumerate(params):
        def f(q, k=k):
            ps = list(params)
            ps[k] = q
            return _mlp_loss(ps, x)
        assert ad.grad_check(f, p, h=1e-5) < 1e-6


def test_grad_check_examples():
    x = _param([3.0])
    assert ad.grad_check(lambda p: ad.tsum(ad.power(p, 2)), x, h=1e-5) < 1e-9
    w = np.array([0.5, -2.0, 1.5])
    y = _param([0.1, 0.2, 0.3])
    assert ad.grad_check(lambda p: ad.tsum(ad.mul(p, w)), y) < 1e-10


def test_grad_check_rk4_unrolled_linear_ode():
    rng = np.random.default_rng(6)
    A = _param(rng.uniform(-1, 1, (3, 3)))
    u0 = rng.uniform(-1, 1, (1, 3))
    h = 0.1

    def f(M):
        u = Tensor(u0)
        total = None
        for _ in range(10):
            k1 = ad.matmul(u, M)
            k2 = ad.matmul(ad.add(u, ad.mul(k1, h / 2)), M)
            k3 = ad.matmul(ad.add(u, ad.mul(k2, h / 2)), M)
            k4 = ad.matmul(ad.add(u, ad.mul(k3, h)), M)
            inc = ad.add(ad.add(k1, ad.mul(k2, 2.0)), ad.add(ad.mul(k3, 2.0), k4))
            u = ad.add(u, ad.mul(inc, h / 6))
            term = ad.tsum(ad.power(u, 2))
            total = term if total is None else ad.add(total, term)
        return total

    assert ad.grad_check(f, A) < 1e-6


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_grad_check_rejects_non_finite():
    x = _param([0.0])
    with pytest.raises(ad.NonFiniteError):
        ad.grad_check(lambda p: ad.tsum(ad.div(1.0, p)), x)


def test_backward_is_bitwise_deterministic():
    rng = np.random.default_rng(7)
    params = _mlp(rng)
    x = rng.uniform(-1, 1, (6, 5))
    runs = []
    for _ in range(2):
        with Tape() as tape:
            loss = _mlp_loss(params, x)
        g = ad.backward(loss, tape, params=params)
        runs.append([g[p].copy() for p in params])
    for a, b in zip(*runs):
        assert np.array_equal(a, b)


def test_no_grad_records_nothing():
    x = _param([1.0, 2.0])
    with Tape() as tape:
        with ad.no_grad():
            ad.mul(x, x)
        assert len(tape.nodes) == 0
        ad.mul(x, x)
        assert len(tape.nodes) == 1


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_debug_checks_flag_non_finite():
    with ad.debug_checks():
        with pytest.raises(ad.NonFiniteError):
            ad.div(np.ones(2), np.zeros(2))
