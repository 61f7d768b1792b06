"""Physics-informed training of spectral neural ODE models."""

from __future__ import annotations

import time
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .basis import (
    SpectralBasis,
    apply_orthogonal,
    decompose,
    derivative_operator,
    reconstruct,
    reconstruct_grid,
)
from .fields import (
    VectorField,
    make_dimwise,
    make_mlp,
    make_orthogonal,
)
from .integrate import TimeGrid, Trajectory, integrate
from .problems import ProblemSpec, residual_eval


class DivergenceError(RuntimeError):
    """Training loss exceeded the divergence threshold or became non-finite."""

    def __init__(self, step: int, loss: float, last_good: dict | None):
        self.step = step
        self.loss = loss
        self.last_good = last_good
        super().__init__(f"training diverged at step {step} (loss={loss:.3e})")


# ------------------------------------------------------------------ model


@dataclass
class ModelConfig:
    modes: tuple
    t_samples: int
    network: str = "mlp"          # mlp | dimwise
    hidden: int = 256
    depth: int = 2
    activation: str = "relu"
    orthogonal: bool = False
    ic_oversample: int = 1
    collocation_oversample: int = 1
    input_scale: str | float = "state_rms"
    output_scale: str | float = 1.0
    epsilon: float | None = None


@dataclass
class SpectralNODE:
    spec: ProblemSpec
    basis: SpectralBasis          # plain basis; orthogonal maps come from ``skew``
    field: VectorField
    u0: np.ndarray                # IC coefficients in the plain basis, (channels, *modes)
    grid: TimeGrid
    collocation: list             # per-axis collocation nodes
    skew: list = field(default_factory=list)

    def named_parameters(self) -> "OrderedDict[str, Tensor]":
        out = OrderedDict()
        for i, net in enumerate(self.field.networks):
            for p in net.parameters():
                out[f"net{i}.{p.name}"] = p
        for i, S in enumerate(self.skew):
            out[f"orth{i}.S"] = S
        return out

    def parameters(self) -> list:
        return list(self.named_parameters().values())

    def current_basis(self) -> SpectralBasis:
        if not self.skew:
            return self.basis
        return self.basis.with_orthogonal([make_orthogonal(S) for S in self.skew])

    def initial_state(self, basis: SpectralBasis | None = None) -> Tensor:
        basis = self.current_basis() if basis is None else basis
        return apply_orthogonal(basis, self.u0, "forward")

    def trajectory(self, grid: TimeGrid | None = None, basis: SpectralBasis | None = None) -> Trajectory:
        basis = self.current_basis() if basis is None else basis
        return integrate(self.field, self.initial_state(basis), self.grid if grid is None else grid)

    def predict(self, axes_points: Sequence, grid: TimeGrid | None = None) -> np.ndarray:
        """Solution channels on a tensor grid at every node: ``(n_t, n_sol, *grid)``."""
        with ad.no_grad():
            basis = self.current_basis()
            traj = self.trajectory(grid, basis)
            ch = list(self.spec.solution_channels)
            states = ad.take(traj.states, ch, axis=1)
            return reconstruct_grid(states, basis, axes_points).data

    def load_arrays(self, arrays: dict):
        params = self.named_parameters()
        if set(arrays) != set(params):
            raise ValueError("checkpoint parameters do not match the model")
        for name, p in params.items():
            if arrays[name].shape != p.shape:
                raise ValueError(f"shape mismatch for {name}: checkpoint {arrays[name].shape}, "
                                 f"model {p.shape}")
            p.data = np.array(arrays[name], dtype=np.float64)


def project_initial_condition(spec: ProblemSpec, basis: SpectralBasis, oversample: int = 1) -> np.ndarray:
    """Coefficients of the IC: collocation solve, least squares when oversampled."""
    nodes = basis.plain().nodes(oversample)
    return decompose(spec.initial_samples(nodes), basis.plain()).data


def _resolve_scale(setting, candidates: dict) -> float:
    """A float, or the RMS of a named reference array (1.0 if that is zero)."""
    if not isinstance(setting, str):
        return float(setting)
    if setting not in candidates:
        raise ValueError(f"unknown scale setting {setting!r}; use a number or one of "
                         f"{', '.join(sorted(candidates))}")
    rms = float(np.sqrt(np.mean(candidates[setting] ** 2)))
    return rms if rms > 0.0 else 1.0


def build_model(spec: ProblemSpec, cfg: ModelConfig, rng: np.random.Generator) -> SpectralNODE:
    basis = spec.basis(cfg.modes)
    M = spec.multiplier(basis)
    u0 = project_initial_condition(spec, basis, cfg.ic_oversample)
    grid = TimeGrid.uniform(spec.T, cfg.t_samples)
    eps = spec.epsilon if cfg.epsilon is None else float(cfg.epsilon)

    if spec.wiring == "second_order":
        net_in = u0[0]
        lin = M(u0[0]).data
        n_nets = 1
        in_rows = basis.shape[0]
    else:
        net_in = u0
        lin = M(u0).data
        n_nets = spec.channels
        in_rows = basis.shape[0] * spec.channels
    scales = {"state_rms": net_in, "multiplier_rms": lin}
    in_scale = _resolve_scale(cfg.input_scale, scales)
    out_scale = _resolve_scale(cfg.output_scale, scales)

    nets = []
    for _ in range(n_nets):
        if cfg.network == "mlp":
            width = int(np.prod(basis.shape))
            n_in = width * (1 if spec.wiring == "second_order" else spec.channels)
            nets.append(make_mlp(n_in, width, rng, hidden=cfg.hidden, depth=cfg.depth,
                                 activation=cfg.activation))
        elif cfg.network == "dimwise":
            if basis.dim != 2:
                raise ValueError("dimensionwise networks need a 2D basis")
            nets.append(make_dimwise(in_rows, basis.shape[1], rng, depth=cfg.depth,
                                     activation=cfg.activation, m_out=basis.shape[0]))
        else:
            raise ValueError(f"unknown network kind {cfg.network!r}")
    vf = VectorField(M, epsilon=eps, networks=nets, wiring=spec.wiring,
                     channels=spec.channels, in_scale=in_scale, out_scale=out_scale)
    skew = []
    if cfg.orthogonal:
        skew = [Tensor(np.zeros((m, m)), requires_grad=True, name=f"S{i}")
                for i, m in enumerate(basis.shape)]
    colloc = basis.nodes(cfg.collocation_oversample)
    return SpectralNODE(spec, basis, vf, u0, grid, colloc, skew)


# ------------------------------------------------------------ derivatives


def _reconstruct_at(coeffs, basis, points, on_grid):
    if on_grid:
        return reconstruct_grid(coeffs, basis, points)
    return reconstruct(coeffs, basis, points)


def _coordinates(points, dim):
    if isinstance(points, (list, tuple)):
        return True, np.meshgrid(*[np.asarray(p, dtype=np.float64) for p in points], indexing="ij")
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.shape[1] != dim:
        raise ValueError(f"points must have {dim} coordinates")
    return False, [pts[:, i] for i in range(dim)]


def spectral_derivatives(trajectory: Trajectory, basis: SpectralBasis, points,
                         channels: Sequence[int] | None = None, grad: bool = True,
                         hess: bool = True) -> dict:
    """Fields ``u``, ``u_t``, per-axis ``grad`` and ``hess`` at all (t_i, x_j).

    ``points`` is a list of per-axis node arrays (tensor grid) or an ``(N, d)``
    array.  ``u_t`` comes from the stored vector-field values, so it is the
    exact time derivative of the model.  Spatial derivatives use the spectral
    operators; ``channels`` selects which state channels get them.
    """
    on_grid, x = _coordinates(points, basis.dim)
    plain = basis.plain()
    S = apply_orthogonal(basis, trajectory.states, "transpose")
    D = apply_orthogonal(basis, trajectory.derivatives, "transpose")
    out = {"u": _reconstruct_at(S, plain, points, on_grid),
           "u_t": _reconstruct_at(D, plain, points, on_grid),
           "grad": [], "hess": [], "x": x}
    n_ch = S.shape[1]
    chans = list(range(n_ch)) if channels is None else list(channels)
    Sd = S if chans == list(range(n_ch)) else ad.take(S, chans, axis=1)
    for i in range(plain.dim):
        if grad:
            op = derivative_operator(plain, i, 1)
            out["grad"].append(_reconstruct_at(op(Sd), op.out_basis, points, on_grid))
        if hess:
            op = derivative_operator(plain, i, 2)
            out["hess"].append(_reconstruct_at(op(Sd), plain, points, on_grid))
    return out


def pde_residual(spec: ProblemSpec, trajectory: Trajectory, basis: SpectralBasis, points) -> Tensor:
    d = spectral_derivatives(trajectory, basis, points, channels=spec.derivative_channels,
                             grad=spec.needs_grad, hess=True)
    return residual_eval(spec, d["u"], d["u_t"], d["grad"], d["hess"], d["x"])


def pde_loss(spec: ProblemSpec, trajectory: Trajectory, basis: SpectralBasis, points) -> Tensor:
    """Mean squared residual over time nodes, channels and collocation points."""
    r = pde_residual(spec, trajectory, basis, points)
    loss = ad.mean(ad.power(r, 2))
    if not np.isfinite(loss.data):
        raise ad.NonFiniteError("physics residual is not finite")
    return loss


def model_loss(model: SpectralNODE, points=None) -> Tensor:
    basis = model.current_basis()
    traj = model.trajectory(basis=basis)
    return pde_loss(model.spec, traj, basis, model.collocation if points is None else points)


# ------------------------------------------------------------------ Adam


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: Sequence[Tensor], lr: float = 1e-2, **kw) -> "AdamState":
        return cls([np.zeros(p.shape) for p in params], [np.zeros(p.shape) for p in params],
                   lr=lr, **kw)


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: AdamState,
              lr: float | None = None) -> list:
    """Bias-corrected Adam update, applied in place to ``params``."""
    lr = state.lr if lr is None else lr
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for i, (p, g) in enumerate(zip(params, grads)):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.shape:
            raise ad.ShapeError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * (g * g)
        p.data = p.data - lr * (state.m[i] / c1) / (np.sqrt(state.v[i] / c2) + state.eps)
    return list(params)


# --------------------------------------------------------------- metrics


@dataclass(frozen=True)
class Metrics:
    rmae: float
    rmse: float


def compute_metrics(pred, gt, channel_axis: int | None = None) -> Metrics:
    """Relative L1 and L2 errors; per channel then averaged when ``channel_axis`` is set."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    if channel_axis is None:
        pairs = [(pred, gt)]
    else:
        pairs = [(np.take(pred, k, axis=channel_axis), np.take(gt, k, axis=channel_axis))
                 for k in range(pred.shape[channel_axis])]
    maes, mses = [], []
    for p, g in pairs:
        l1, l2 = np.sum(np.abs(g)), np.sum(g ** 2)
        if l1 == 0.0:
            raise ValueError("ground truth has zero norm; relative errors are undefined")
        maes.append(np.sum(np.abs(p - g)) / l1)
        mses.append(np.sqrt(np.sum((p - g) ** 2) / l2))
    return Metrics(float(np.mean(maes)), float(np.mean(mses)))


def roi_metrics(pred, gt) -> Metrics:
    """Metrics for ``(n_t, channels, *grid)`` arrays, averaged over channels."""
    return compute_metrics(pred, gt, channel_axis=1)


# ------------------------------------------------------------- training


@dataclass
class LossReport:
    step: int
    loss: float
    per_channel: tuple
    wall_seconds: float
    rmae: float | None = None
    rmse: float | None = None


@dataclass
class TrainResult:
    model: SpectralNODE
    history: list

    @property
    def losses(self) -> np.ndarray:
        return np.array([r.loss for r in self.history])

    @property
    def final_metrics(self) -> Metrics | None:
        for r in reversed(self.history):
            if r.rmse is not None:
                return Metrics(r.rmae, r.rmse)
        return None


def _snapshot(model: SpectralNODE) -> dict:
    return {k: p.data.copy() for k, p in model.named_parameters().items()}


def train(model: SpectralNODE, steps: int, lr: float = 1e-2, seed: int = 0,
          metric_fn: Callable[[SpectralNODE], Metrics] | None = None,
          metric_every: int = 25, collocation: str = "grid",
          n_random_points: int | None = None, divergence: float = 1e6,
          log: Callable[[LossReport], None] | None = None) -> TrainResult:
    """Adam on the physics loss; one history row per parameter state 0..steps.

    Row ``i`` holds the loss after ``i`` updates.  Metrics are evaluated every
    ``metric_every`` rows and on the final row.  ``collocation="random"``
    draws ``n_random_points`` spatial points per pass (shared by all time
    slices) from the collocation grid.
    """
    if collocation not in ("grid", "random"):
        raise ValueError(f"unknown collocation strategy {collocation!r}")
    rng = np.random.default_rng(seed)
    params = model.parameters()
    state = AdamState.for_params(params, lr=lr)
    history = []
    last_good = _snapshot(model)
    t_start = time.perf_counter()
    mesh = None
    if collocation == "random":
        mesh = np.stack([m.ravel() for m in np.meshgrid(*model.collocation, indexing="ij")], axis=1)
    for i in range(steps + 1):
        points = model.collocation
        if mesh is not None:
            k = n_random_points or max(1, len(mesh) // 4)
            points = mesh[np.sort(rng.choice(len(mesh), size=k, replace=False))]
        update = i < steps
        with Tape() as tape:
            basis = model.current_basis()
            traj = model.trajectory(basis=basis)
            r = pde_residual(model.spec, traj, basis, points)
            sq = ad.power(r, 2)
            loss = ad.mean(sq)
        value = float(loss.data)
        if not np.isfinite(value) or value > divergence:
            raise DivergenceError(i, value, last_good)
        axes = tuple(a for a in range(sq.ndim) if a != 1)
        per_ch = tuple(float(v) for v in np.mean(sq.data, axis=axes))
        report = LossReport(i, value, per_ch, time.perf_counter() - t_start)
        if metric_fn is not None and (i % metric_every == 0 or i == steps):
            m = metric_fn(model)
            report.rmae, report.rmse = m.rmae, m.rmse
        history.append(report)
        if log is not None:
            log(report)
        if update:
            grads = ad.backward(loss, tape, params=params)
            last_good = _snapshot(model)
            adam_step(params, [grads[p] for p in params], state)
    return TrainResult(model, history)
