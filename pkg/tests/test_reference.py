import numpy as np
import pytest

from specnode.basis import decompose
from specnode.problems import make_burgers, make_homogeneous_wave, make_sine_gordon
from specnode.reference import (
    IndeterminateOrderError,
    InstabilityError,
    ReferenceSolution,
    convergence_order,
    dealias_mask,
    read_binary,
    read_csv,
    solve_reference,
    write_binary,
    write_csv,
)


def test_dealias_mask_keeps_two_thirds():
    spec = make_burgers()
    basis = spec.basis((12, 6))
    mask = dealias_mask(basis)
    assert mask.shape == (12, 6)
    freqs = basis.axes[0].frequencies
    np.testing.assert_array_equal(mask[:, 0], (freqs <= 4).astype(float))
    assert mask[0, 5] == 0.0 and mask[0, 4] == 1.0   # frequency 2 of 3 kept, 3 dropped


def test_heat_limit_mode_decay():
    nu, T = 0.05, 0.5
    spec = make_burgers(nu=nu, T=T, amplitude=1e-6)
    sol = solve_reference(spec, 0.005, (16, 16), out_step=0.1)
    basis = spec.basis((16, 16))
    ic = decompose(spec.initial_samples(basis.nodes()), basis).data
    k = basis.wavenumber_grid()
    kappa2 = k[0] ** 2 + k[1] ** 2
    want = ic * np.exp(-nu * kappa2 * T)
    scale = np.max(np.abs(ic))
    assert np.max(np.abs(sol.final_state - want)) / scale < 1e-6


def test_burgers_conserves_spatial_mean():
    spec = make_burgers(nu=0.05, T=0.5)
    x = [np.arange(32) * 4 / 32] * 2
    sol = solve_reference(spec, 0.005, (32, 32), eval_axes=x, out_step=0.05)
    means = sol.values.mean(axis=(2, 3))
    assert np.max(np.abs(means - means[0])) < 1e-8
    assert means[0, 1] == pytest.approx(0.5)


def test_homogeneous_wave_matches_modal_solution():
    spec = make_homogeneous_wave(sigma=0.5, T=1.0)
    modes = (24, 24)
    sol = solve_reference(spec, 0.01, modes)
    basis = spec.basis(modes)
    ic = decompose(spec.initial_samples(basis.nodes()), basis).data[0]
    k = basis.wavenumber_grid()
    omega = np.sqrt(k[0] ** 2 + k[1] ** 2)
    want = ic * np.cos(omega * 1.0)
    assert np.max(np.abs(sol.final_state[0] - want)) < 1e-7


def test_output_grid_and_substeps():
    spec = make_sine_gordon(T=0.3)
    x = np.linspace(-4, 4, 11)
    sol = solve_reference(spec, 0.004, 32, eval_axes=[x], out_step=0.03, t_end=0.6)
    assert sol.values.shape == (21, 1, 11)
    np.testing.assert_allclose(sol.times, 0.03 * np.arange(21))
    assert sol.meta["substeps"] == 8 and sol.dt == pytest.approx(0.00375)
    assert sol.window(5).values.shape == (5, 1, 11)
    with pytest.raises(ValueError):
        solve_reference(spec, 0.004, 32, out_step=0.07, t_end=0.3)


def test_unstable_step_is_rejected():
    spec = make_sine_gordon(T=0.3)
    with pytest.raises(InstabilityError):
        solve_reference(spec, 0.2, 64, out_step=0.2, t_end=0.2)


def test_growth_guard():
    spec = make_sine_gordon(T=0.3)
    with pytest.raises(InstabilityError, match="grew"):
        solve_reference(spec, 0.01, 32, out_step=0.1, t_end=0.3, growth_limit=1e-3)


@pytest.mark.parametrize("maker", [make_sine_gordon, make_burgers])
def test_convergence_order_is_four(maker):
    spec = maker()
    modes = 32 if spec.dim == 1 else (16, 16)
    rep = convergence_order(spec, 0.05, modes, t_end=0.4)
    assert 3.5 <= rep.order <= 4.3
    assert rep.ratio == pytest.approx(2 ** rep.order)


def test_convergence_order_at_rounding_floor():
    spec = make_burgers(amplitude=0.0)
    with pytest.raises(IndeterminateOrderError):
        convergence_order(spec, 0.05, (8, 8), t_end=0.2)


def _small_solution():
    rng = np.random.default_rng(0)
    axes = [np.linspace(0, 1, 3), np.array([0.0, 0.5])]
    return ReferenceSolution("burgers2d", np.array([0.0, 0.1]), axes,
                             rng.normal(size=(2, 2, 3, 2)), 0.05, (0.25, 0.25),
                             {"modes": [4, 4], "integrator": "rk4"})


def test_csv_round_trip(tmp_path):
    sol = _small_solution()
    path = tmp_path / "ref.csv"
    write_csv(path, sol, {"config": "abc", "seed": 3})
    back, header = read_csv(path)
    assert header["config"] == "abc" and header["seed"] == "3"
    assert back.meta == sol.meta and back.dx == sol.dx and back.dt == sol.dt
    np.testing.assert_array_equal(back.values, sol.values)
    for a, b in zip(back.axes, sol.axes):
        np.testing.assert_array_equal(a, b)
    text = path.read_text().splitlines()
    assert text[2] == "t,x,y,c0,c1" and len(text) == 3 + 2 * 6
    first = path.read_bytes()
    write_csv(path, sol, {"config": "abc", "seed": 3})
    assert path.read_bytes() == first


def test_binary_round_trip(tmp_path):
    sol = _small_solution()
    path = tmp_path / "ref.bin"
    write_binary(path, sol, {"config": "abc"})
    back, extra = read_binary(path)
    assert extra == {"config": "abc"} and back.problem == "burgers2d"
    np.testing.assert_array_equal(back.values, sol.values)
    np.testing.assert_array_equal(back.times, sol.times)
    assert back.dx == sol.dx
    assert path.read_bytes()[:8] == b"SPNREF\x00\x01"
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"X" * 200)
    with pytest.raises(ValueError):
        read_binary(bad)
