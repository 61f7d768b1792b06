import numpy as np
import pytest

from specnode.autodiff import ShapeError
from specnode.problems import (
    ProblemSpec,
    VelocityField,
    make_burgers,
    make_homogeneous_wave,
    make_problem,
    make_sine_gordon,
    make_wave,
    residual_eval,
)


def test_velocity_field_layers():
    c = VelocityField()
    y = np.array([-1.0, 0.75, 1.9, 0.5])
    np.testing.assert_allclose(c(0.0, y), [1.0, 1.25, 1.5, 1.125], atol=1e-12)
    assert c.bounds == (1.0, 1.5)
    assert c(np.zeros((2, 3)), np.zeros((2, 3))).shape == (2, 3)


def test_wave_boxes_and_basis():
    spec = make_wave()
    assert spec.roi == ((-2.0, 2.0), (-2.0, 2.0))
    assert spec.domain == ((-4.0, 4.0), (-4.0, 4.0))
    assert spec.basis_kinds == ("cosine", "cosine") and spec.wiring == "second_order"
    assert spec.epsilon == 1.0
    with pytest.raises(ValueError):
        make_wave(sigma=0.0)


def test_wave_initial_condition():
    spec = make_wave(sigma=0.5)
    u = spec.initial_samples([np.array([0.0, 0.5]), np.array([0.0])])
    assert u.shape == (2, 2, 1)
    np.testing.assert_allclose(u[0, :, 0], [1.0, np.exp(-0.5)])
    assert np.all(u[1] == 0)


def test_sine_gordon_setup():
    spec = make_sine_gordon()
    assert spec.basis_kinds == ("sine",) and spec.boundary == "dirichlet"
    assert spec.epsilon == 0.1 and spec.T == 3.0
    u = spec.initial_samples([np.array([0.0])])[0, 0]
    assert u == pytest.approx(1 / (np.sqrt(2 * np.pi) * 0.1))
    with pytest.raises(ValueError):
        make_sine_gordon(linearization="cubic")


@pytest.mark.parametrize("lin, shift", [("free_wave", 0.0), ("klein_gordon", -10.0)])
def test_sine_gordon_multiplier(lin, shift):
    spec = make_sine_gordon(linearization=lin)
    basis = spec.basis(8)
    k = np.arange(1, 9) * np.pi / 8.0
    np.testing.assert_allclose(spec.multiplier(basis).symbol(), -k ** 2 + shift, rtol=1e-14)


def test_burgers_setup_and_ic():
    spec = make_burgers(nu=0.05)
    assert spec.basis_kinds == ("fourier", "fourier") and spec.dealias and spec.needs_grad
    x = [np.array([0.25, 0.5]), np.array([0.5, 1.0])]
    u = spec.initial_samples(x)
    X, Y = np.meshgrid(*x, indexing="ij")
    np.testing.assert_allclose(u[0], np.sin(np.pi * X) * np.sin(np.pi * Y), atol=1e-15)
    np.testing.assert_allclose(u[1], np.cos(np.pi * Y) ** 2, atol=1e-15)
    v = make_burgers(ic_form="product").initial_samples(x)[1]
    np.testing.assert_allclose(v, np.cos(np.pi * X) * np.cos(np.pi * Y), atol=1e-15)
    with pytest.raises(ValueError):
        make_burgers(nu=0.0)
    with pytest.raises(ValueError):
        make_burgers(ic_form="other")


def test_boundary_basis_mismatch():
    spec = make_sine_gordon()
    with pytest.raises(ValueError):
        ProblemSpec(**{**spec.__dict__, "basis_kinds": ("cosine",)})


def test_make_problem_dispatch():
    assert make_problem("burgers2d", nu=0.1).params["nu"] == 0.1
    with pytest.raises(KeyError, match="available"):
        make_problem("heat")


def test_homogeneous_wave_residual_vanishes_on_standing_mode():
    spec = make_homogeneous_wave(speed=2.0)
    x = np.linspace(-4, 4, 9)
    y = np.linspace(-4, 4, 7)
    t = np.array([0.0, 0.3, 0.7])[:, None, None]
    X, Y = np.meshgrid(x, y, indexing="ij")
    kx, ky = np.pi / 8, 2 * np.pi / 8
    w = 2.0 * np.hypot(kx, ky)
    shape = np.cos(kx * (X + 4)) * np.cos(ky * (Y + 4))
    u = np.cos(w * t) * shape
    v = -w * np.sin(w * t) * shape
    a = -w ** 2 * np.cos(w * t) * shape
    U = np.stack([u, v], axis=1)
    Ut = np.stack([v, a], axis=1)
    hess = [(-kx ** 2 * u)[:, None], (-ky ** 2 * u)[:, None]]
    r = residual_eval(spec, U, Ut, [], hess, [X, Y]).data
    assert r.shape == (3, 2, 9, 7)
    assert np.max(np.abs(r)) < 1e-13


def test_sine_gordon_residual_formula():
    spec = make_sine_gordon()
    rng = np.random.default_rng(0)
    u, v, ut, vt, uxx = rng.normal(size=(5, 4, 6))
    U = np.stack([u, v], axis=1)
    Ut = np.stack([ut, vt], axis=1)
    r = residual_eval(spec, U, Ut, [], [uxx[:, None]], [np.zeros(6)]).data
    np.testing.assert_allclose(r[:, 0], ut - v, atol=1e-15)
    np.testing.assert_allclose(r[:, 1], vt - uxx + 10 * np.sin(u), atol=1e-14)


def test_burgers_residual_formula():
    spec = make_burgers(nu=0.03)
    rng = np.random.default_rng(1)
    n = (2, 2, 3, 4)
    U, Ut = rng.normal(size=n), rng.normal(size=n)
    gx, gy, hx, hy = rng.normal(size=(4,) + n)
    r = residual_eval(spec, U, Ut, [gx, gy], [hx, hy], [None, None]).data
    for k in range(2):
        want = Ut[:, k] - (0.03 * (hx[:, k] + hy[:, k]) - U[:, 0] * gx[:, k] - U[:, 1] * gy[:, k])
        np.testing.assert_allclose(r[:, k], want, atol=1e-14)


def test_linear_part_matches_diffusion():
    spec = make_burgers(nu=0.2)
    rng = np.random.default_rng(2)
    fields = {"u": rng.normal(size=(1, 2, 5)), "grad": [], "hess": list(rng.normal(size=(2, 1, 2, 5)))}
    got = spec.linear_part(fields, 1).data
    np.testing.assert_allclose(got, 0.2 * (fields["hess"][0][:, 1] + fields["hess"][1][:, 1]))


def test_residual_rejects_channel_mismatch():
    spec = make_burgers()
    with pytest.raises(ShapeError):
        residual_eval(spec, np.zeros((1, 3, 4)), np.zeros((1, 3, 4)), [], [], [])
