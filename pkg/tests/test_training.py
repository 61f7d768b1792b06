import numpy as np
import pytest

from specnode import autodiff as ad
from specnode.basis import reconstruct_grid
from specnode.config import preset
from specnode.integrate import TimeGrid, Trajectory
from specnode.training import (
    AdamState,
    DivergenceError,
    adam_step,
    build_model,
    compute_metrics,
    model_loss,
    pde_loss,
    pde_residual,
    project_initial_condition,
    roi_metrics,
    spectral_derivatives,
    train,
)


def _tiny(name, seed=0, **kw):
    cfg = preset(name, "tiny").replace(**kw)
    return cfg, build_model(cfg.problem_spec(), cfg.model_config(), np.random.default_rng(seed))


# ------------------------------------------------------------ metrics


def test_metrics_known_values():
    gt = np.array([1.0, -2.0, 2.0])
    pred = np.array([1.5, -2.0, 2.0])
    m = compute_metrics(pred, gt)
    assert m.rmae == pytest.approx(0.5 / 5.0)
    assert m.rmse == pytest.approx(0.5 / 3.0)
    assert compute_metrics(gt, gt).rmse == 0.0


def test_metrics_average_over_channels():
    gt = np.ones((2, 2, 3))
    pred = gt.copy()
    pred[:, 1] *= 1.1
    m = roi_metrics(pred, gt)
    assert m.rmse == pytest.approx(0.05)
    assert m.rmae == pytest.approx(0.05)


def test_metrics_errors():
    with pytest.raises(ValueError):
        compute_metrics(np.ones(3), np.ones(4))
    with pytest.raises(ValueError):
        compute_metrics(np.ones(3), np.zeros(3))


# --------------------------------------------------------------- Adam


def test_adam_first_step_moves_by_lr_times_sign():
    p = ad.Tensor(np.array([1.0, -1.0, 0.5]), requires_grad=True)
    g = np.array([3.0, -1e-3, 2.0])
    st = AdamState.for_params([p], lr=0.1)
    adam_step([p], [g], st)
    np.testing.assert_allclose(p.data, [1.0, -1.0, 0.5] - 0.1 * g / (np.abs(g) + 1e-8), rtol=1e-14)
    assert st.step == 1


def test_adam_two_steps_match_hand_computation():
    p = ad.Tensor(np.array([0.0]), requires_grad=True)
    st = AdamState.for_params([p], lr=0.01)
    for g in (1.0, -2.0):
        adam_step([p], [np.array([g])], st)
    m = 0.9 * 0.1 * 1.0 + 0.1 * -2.0
    v = 0.999 * 0.001 * 1.0 + 0.001 * 4.0
    mh, vh = m / (1 - 0.81), v / (1 - 0.999 ** 2)
    want = -0.01 / (1.0 + 1e-8) - 0.01 * mh / (np.sqrt(vh) + 1e-8)
    assert p.data[0] == pytest.approx(want, rel=1e-12)


def test_adam_shape_check():
    p = ad.Tensor(np.zeros(2), requires_grad=True)
    with pytest.raises(ad.ShapeError):
        adam_step([p], [np.zeros(3)], AdamState.for_params([p]))


# -------------------------------------------------- spectral derivatives


def test_spectral_derivatives_of_single_mode():
    cfg, model = _tiny("burgers2d")
    basis = model.basis
    coeffs = np.zeros((1, 2) + basis.shape)
    coeffs[0, 0, 1, 2] = 1.0          # cos(k x) sin(k y) with k = pi/2 on [0, 4]
    coeffs[0, 1, 0, 0] = 1.0          # constant
    states = ad.Tensor(np.concatenate([coeffs, 2 * coeffs]))
    traj = Trajectory(states, ad.Tensor(-states.data), TimeGrid.uniform(1.0, 2))
    x = [np.linspace(0, 4, 5), np.linspace(0, 4, 6)]
    d = spectral_derivatives(traj, basis, x)
    X, Y = np.meshgrid(*x, indexing="ij")
    k = np.pi / 2
    norm = np.sqrt(2 / 4) ** 2
    u = norm * np.cos(k * X) * np.sin(k * Y)
    np.testing.assert_allclose(d["u"].data[0, 0], u, atol=1e-13)
    np.testing.assert_allclose(d["u"].data[1, 0], 2 * u, atol=1e-13)
    np.testing.assert_allclose(d["u_t"].data[0, 0], -u, atol=1e-13)
    np.testing.assert_allclose(d["grad"][0].data[0, 0], -k * norm * np.sin(k * X) * np.sin(k * Y), atol=1e-13)
    np.testing.assert_allclose(d["grad"][1].data[0, 0], k * norm * np.cos(k * X) * np.cos(k * Y), atol=1e-13)
    np.testing.assert_allclose(d["hess"][0].data[0, 0], -k ** 2 * u, atol=1e-13)
    np.testing.assert_allclose(d["hess"][1].data[0, 1], 0.0, atol=1e-13)
    pts = np.stack([X.ravel(), Y.ravel()], axis=1)
    d2 = spectral_derivatives(traj, basis, pts)
    np.testing.assert_allclose(d2["grad"][0].data[0, 0], d["grad"][0].data[0, 0].ravel(), atol=1e-13)


# -------------------------------------------------------------- model


@pytest.mark.parametrize("name", ["sinegordon", "burgers2d", "wave3layer"])
def test_tiny_model_shapes(name):
    cfg, model = _tiny(name)
    spec = model.spec
    assert model.u0.shape == (spec.channels,) + tuple(model.basis.shape)
    axes = cfg.eval_axes(spec)
    pred = model.predict(axes)
    assert pred.shape == (cfg.t_samples, len(spec.solution_channels)) + tuple(len(a) for a in axes)
    assert np.isfinite(model_loss(model).data)


@pytest.mark.parametrize("name", ["sinegordon", "burgers2d", "wave3layer"])
def test_loss_gradient_matches_finite_differences(name):
    # eps = 1 keeps gradients well above finite-difference cancellation noise
    cfg, model = _tiny(name, epsilon=1.0, t_samples=6,
                       modes=(8,) * (1 if name == "sinegordon" else 2))
    for p in model.parameters()[:3]:
        with ad.Tape() as tape:
            loss = model_loss(model)
        g = ad.backward(loss, tape, params=[p])[p].ravel()
        idx = np.argsort(-np.abs(g))[:8]
        assert ad.grad_check(lambda _: model_loss(model), p, indices=idx) < 1e-5


def test_initial_slice_is_projected_ic():
    cfg, model = _tiny("sinegordon")
    basis = model.basis
    want = project_initial_condition(model.spec, basis, cfg.ic_oversample)
    x = [np.linspace(-4, 4, 33)]
    before = model.predict(x)[0]
    ic = reconstruct_grid(want[None, :1], basis, x).data[0]
    assert np.max(np.abs(before - ic)) < 1e-12
    train(model, 3, lr=1e-2)
    after = model.predict(x)[0]
    assert np.max(np.abs(after - ic)) < 1e-12


def test_distinct_initial_states_stay_distinct():
    cfg, model = _tiny("burgers2d")
    rng = np.random.default_rng(5)
    with ad.no_grad():
        a = model.trajectory().states.data
        model.u0 = model.u0 + 1e-3 * rng.normal(size=model.u0.shape)
        b = model.trajectory().states.data
    diff = np.abs(a - b).reshape(len(a), -1).max(axis=1)
    assert np.all(diff > 0)


def test_pde_loss_is_mean_square():
    cfg, model = _tiny("sinegordon")
    basis = model.current_basis()
    traj = model.trajectory(basis=basis)
    r = pde_residual(model.spec, traj, basis, model.collocation).data
    assert pde_loss(model.spec, traj, basis, model.collocation).data == pytest.approx(np.mean(r ** 2))


# ------------------------------------------------------------ training


def test_history_rows_and_cadence():
    cfg, model = _tiny("sinegordon")
    calls = []

    def metric(m):
        calls.append(1)
        return compute_metrics(np.ones(2), np.ones(2))

    res = train(model, 7, lr=1e-3, metric_fn=metric, metric_every=3)
    assert [r.step for r in res.history] == list(range(8))
    assert [r.step for r in res.history if r.rmse is not None] == [0, 3, 6, 7]
    assert len(calls) == 4
    assert res.final_metrics.rmse == 0.0
    assert len(res.history[0].per_channel) == 2


def test_training_reduces_loss():
    cfg, model = _tiny("sinegordon")
    res = train(model, 20, lr=1e-2)
    assert res.losses[-1] < res.losses[0]


def test_training_is_deterministic():
    outs = []
    for _ in range(2):
        cfg, model = _tiny("burgers2d", seed=3)
        res = train(model, 4, lr=1e-2, seed=3, collocation="random", n_random_points=20)
        outs.append((res.losses, [p.data.copy() for p in model.parameters()]))
    np.testing.assert_array_equal(outs[0][0], outs[1][0])
    for a, b in zip(outs[0][1], outs[1][1]):
        np.testing.assert_array_equal(a, b)


def test_divergence_keeps_last_good_parameters():
    cfg, model = _tiny("sinegordon")
    with pytest.raises(DivergenceError) as info:
        train(model, 50, lr=1e3, divergence=1e3)
    last = info.value.last_good
    assert set(last) == set(model.named_parameters())
    assert all(np.all(np.isfinite(v)) for v in last.values())


def test_unknown_collocation_strategy():
    cfg, model = _tiny("sinegordon")
    with pytest.raises(ValueError):
        train(model, 1, collocation="sobol")


def test_load_arrays_checks_shapes():
    cfg, model = _tiny("sinegordon")
    arrays = {k: v.data.copy() for k, v in model.named_parameters().items()}
    model.load_arrays(arrays)
    first = next(iter(arrays))
    arrays[first] = np.zeros((1, 1))
    with pytest.raises(ValueError, match="shape mismatch"):
        model.load_arrays(arrays)
    with pytest.raises(ValueError):
        model.load_arrays({})


def test_orthogonal_maps_start_at_identity():
    cfg, model = _tiny("sinegordon", orthogonal=True)
    assert list(model.named_parameters())[-1] == "orth0.S"
    x = [np.linspace(-4, 4, 9)]
    _, plain = _tiny("sinegordon")
    np.testing.assert_allclose(model.predict(x), plain.predict(x), atol=1e-12)
