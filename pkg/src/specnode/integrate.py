"""Fixed-step classical RK4 over uniform time grids, with stability diagnostics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .basis import LinearSpectralOperator

# RK4 absolute-stability limits on the imaginary and negative real axes
IMAG_AXIS_BOUND = 2.0 * np.sqrt(2.0)
REAL_AXIS_BOUND = -2.785293563405282


class IntegrationError(ad.NonFiniteError):
    """A state became non-finite; carries the offending node index."""

    def __init__(self, node: int, t: float):
        self.node = node
        self.t = t
        super().__init__(
            f"non-finite state at node {node} (t={t:.6g}); the linear spectrum may leave "
            "the RK4 stability region, try a smaller step")


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    T: float
    t_samples: int
    h: float

    def __post_init__(self):
        if self.t_samples < 1:
            raise ValueError("a time grid needs at least one node")
        if self.t_samples > 1 and not self.h > 0:
            raise ValueError("time step must be positive")

    @classmethod
    def uniform(cls, T: float, t_samples: int, t0: float = 0.0) -> "TimeGrid":
        """Nodes ``t0 .. T`` inclusive, ``h = (T - t0) / (t_samples - 1)``."""
        t_samples = int(t_samples)
        if t_samples == 1:
            return cls(float(t0), float(t0), 1, 0.0)
        if not T > t0:
            raise ValueError("time grid must be strictly increasing")
        return cls(float(t0), float(T), t_samples, (T - t0) / (t_samples - 1))

    @classmethod
    def from_step(cls, h: float, steps: int, t0: float = 0.0) -> "TimeGrid":
        """Grid of ``steps`` steps of exactly ``h``; keeps ``h`` bitwise."""
        return cls(float(t0), float(t0 + steps * h), int(steps) + 1, float(h))

    @property
    def steps(self) -> int:
        return self.t_samples - 1

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.h * np.arange(self.t_samples)

    def extended(self, multiplier: float) -> "TimeGrid":
        """Same step, horizon stretched by ``multiplier``."""
        steps = int(round(self.steps * multiplier))
        return TimeGrid.from_step(self.h, steps, self.t0)


@dataclass
class Trajectory:
    states: Tensor       # (t_samples, *state_shape)
    derivatives: Tensor  # field evaluated at every node
    grid: TimeGrid

    def __len__(self):
        return self.grid.t_samples


def rk4_step(field: Callable, state, h: float, k1=None) -> Tensor:
    """One classical RK4 step; ``k1`` may be passed when already evaluated."""
    state = ad.as_tensor(state)
    if k1 is None:
        k1 = field(state)
    k2 = field(ad.add(state, ad.mul(k1, 0.5 * h)))
    k3 = field(ad.add(state, ad.mul(k2, 0.5 * h)))
    k4 = field(ad.add(state, ad.mul(k3, h)))
    incr = ad.add(ad.add(k1, ad.mul(k2, 2.0)), ad.add(ad.mul(k3, 2.0), k4))
    out = ad.add(state, ad.mul(incr, h / 6.0))
    if not np.all(np.isfinite(out.data)):
        raise ad.NonFiniteError("non-finite RK4 stage; the step may be outside the stability region")
    return out


def integrate(field: Callable, u0, grid: TimeGrid) -> Trajectory:
    """Unrolled RK4 over every node of ``grid``; the tape sees all steps."""
    state = ad.as_tensor(u0)
    if not np.all(np.isfinite(state.data)):
        raise IntegrationError(0, grid.t0)
    states = [state]
    derivs = [field(state)]
    for i in range(grid.steps):
        try:
            state = rk4_step(field, state, grid.h, k1=derivs[-1])
        except ad.NonFiniteError:
            raise IntegrationError(i + 1, grid.t0 + (i + 1) * grid.h) from None
        states.append(state)
        derivs.append(field(state))
    return Trajectory(ad.stack(states, axis=0), ad.stack(derivs, axis=0), grid)


def semigroup_check(field: Callable, u0, t1_steps: int, t2_steps: int, h: float) -> float:
    """Max deviation between one run of ``t1+t2`` steps and two chained runs."""
    with ad.no_grad():
        whole = integrate(field, u0, TimeGrid.from_step(h, t1_steps + t2_steps))
        first = integrate(field, u0, TimeGrid.from_step(h, t1_steps))
        second = integrate(field, first.states.data[-1], TimeGrid.from_step(h, t2_steps))
    return float(np.max(np.abs(whole.states.data[-1] - second.states.data[-1])))


def rk4_amplification(z) -> np.ndarray:
    """Stability polynomial ``1 + z + z^2/2 + z^3/6 + z^4/24``."""
    z = np.asarray(z, dtype=np.complex128)
    return 1 + z * (1 + z * (0.5 + z * (1.0 / 6.0 + z / 24.0)))


@dataclass(frozen=True)
class StabilityReport:
    stable: bool
    max_abs_lambda_h: float
    worst_mode: tuple
    worst_amplification: float


def multiplier_spectrum(multiplier: LinearSpectralOperator, second_order: bool = False) -> np.ndarray:
    """Eigenvalues per mode; for second-order systems those of ``[[0, 1], [m, 0]]``."""
    sym = multiplier.symbol()
    if not second_order:
        return sym
    return np.sqrt(sym.astype(np.complex128))  # the pair is +-sqrt(m)


def stability_bound(multiplier: LinearSpectralOperator, h: float,
                    second_order: bool = False, tol: float = 1e-12) -> StabilityReport:
    """Check that every ``lambda h`` lies in the RK4 region ``|R(z)| <= 1``."""
    lam = multiplier_spectrum(multiplier, second_order) * h
    if second_order:
        amp = np.maximum(np.abs(rk4_amplification(lam)), np.abs(rk4_amplification(-lam)))
    else:
        amp = np.abs(rk4_amplification(lam))
    worst = np.unravel_index(int(np.argmax(amp)), amp.shape)
    return StabilityReport(
        stable=bool(np.all(amp <= 1.0 + tol)),
        max_abs_lambda_h=float(np.max(np.abs(lam))),
        worst_mode=tuple(int(i) for i in worst),
        worst_amplification=float(amp[worst]),
    )
