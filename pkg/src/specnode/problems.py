"""Benchmark PDE definitions: initial data, right-hand sides and linearizations.

Every problem is written as ``u_t = rhs(u, grad u, hess u, x)`` per state
channel.  Second-order problems carry ``(u, v)`` with ``u_t = v`` and an
acceleration equation for ``v``; first-order problems have one equation per
channel.  The linearization ``a0 u + a1 . grad u + sum_i a2_i d2u/dx_i^2``
feeds the spectral multiplier of the vector field.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from . import autodiff as ad
from .autodiff import Tensor
from .basis import SpectralBasis, build_basis, multiplier_from_linear_pde

PRESET_NAMES = ("wave3layer", "sinegordon", "burgers2d")
BC_KIND = {"periodic": "fourier", "dirichlet": "sine", "neumann": "cosine"}


@dataclass(frozen=True)
class VelocityField:
    """Horizontally layered medium ``c = base + jump * sum_i sigmoid(k (y - y_i))``."""

    base: float = 1.0
    jump: float = 0.25
    interfaces: tuple = (0.5, 1.0)
    sharpness: float = 1000.0

    def __call__(self, x, y) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        c = np.full(np.broadcast(np.asarray(x), y).shape, self.base)
        for yi in self.interfaces:
            c = c + self.jump * expit(self.sharpness * (y - yi))
        return c

    @property
    def bounds(self) -> tuple:
        return self.base, self.base + self.jump * len(self.interfaces)


@dataclass
class ProblemSpec:
    name: str
    dim: int
    channels: int
    domain: tuple                # computational box, one (lo, hi) per axis
    roi: tuple                   # region of interest for metrics
    basis_kinds: tuple
    boundary: str
    ic: Callable                 # list of meshgrid arrays -> (channels, *grid)
    rhs: Callable                # (fields dict, x meshes) -> list of equation right-hand sides
    a0: float = 0.0
    a1: tuple | None = None
    a2: tuple = ()
    epsilon: float = 0.1
    T: float = 1.0
    wiring: str = "first_order"
    needs_grad: bool = False
    dealias: bool = False
    solution_channels: tuple = (0,)
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        want = BC_KIND[self.boundary]
        if any(k != want for k in self.basis_kinds):
            raise ValueError(f"{self.boundary} boundary needs a {want} basis")

    @property
    def equation_channels(self) -> tuple:
        return (1,) if self.wiring == "second_order" else tuple(range(self.channels))

    @property
    def derivative_channels(self) -> tuple:
        """State channels whose spatial derivatives enter the right-hand side."""
        return (0,) if self.wiring == "second_order" else tuple(range(self.channels))

    def basis(self, modes: Sequence[int] | int) -> SpectralBasis:
        return build_basis(self.basis_kinds, modes, self.domain)

    def multiplier(self, basis: SpectralBasis):
        return multiplier_from_linear_pde(self.a0, self.a1, np.asarray(self.a2), basis)

    def linear_part(self, fields: dict, k: int) -> Tensor:
        """Linearized operator applied to derivative channel ``k`` in physical space."""
        u = fields["u"][:, k]
        out = ad.mul(u, self.a0) if self.a0 else None
        terms = []
        if self.a1 is not None:
            terms += [(a, fields["grad"][i][:, k]) for i, a in enumerate(self.a1)]
        terms += [(a, fields["hess"][i][:, k]) for i, a in enumerate(self.a2)]
        for a, g in terms:
            if a:
                g = ad.mul(g, float(a))
                out = g if out is None else ad.add(out, g)
        return out if out is not None else ad.mul(u, 0.0)

    def initial_samples(self, axes_points: Sequence) -> np.ndarray:
        mesh = np.meshgrid(*axes_points, indexing="ij")
        return np.asarray(self.ic(mesh), dtype=np.float64)


def _pad_box(roi, factor):
    out = []
    for lo, hi in roi:
        c, hw = 0.5 * (lo + hi), 0.5 * (hi - lo) * factor
        out.append((c - hw, c + hw))
    return tuple(out)


def make_wave(domain=((-2.0, 2.0), (-2.0, 2.0)), sigma: float = 0.1,
              velocity: VelocityField | None = None, T: float = 2.0,
              extension: float = 2.0, epsilon: float = 1.0) -> ProblemSpec:
    """Acoustic wave ``u_tt = c(x)^2 lap u`` in a layered medium.

    ``domain`` is the region of interest; the computational box is enlarged by
    ``extension`` per axis so reflections from the Neumann walls stay outside
    it.  The linearization is the homogeneous wave with ``c = 1``.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    velocity = VelocityField() if velocity is None else velocity
    roi = tuple(tuple(map(float, ab)) for ab in domain)
    comp = _pad_box(roi, extension)

    def ic(mesh):
        r2 = sum(m ** 2 for m in mesh)
        u = np.exp(-r2 / (2 * sigma ** 2))
        return np.stack([u, np.zeros_like(u)])

    def rhs(fields, x):
        lap = ad.add(fields["hess"][0][:, 0], fields["hess"][1][:, 0])
        return [ad.mul(lap, velocity(x[0], x[1]) ** 2)]

    return ProblemSpec(
        name="wave3layer", dim=2, channels=2, domain=comp, roi=roi,
        basis_kinds=("cosine", "cosine"), boundary="neumann", ic=ic, rhs=rhs,
        a2=(1.0, 1.0), epsilon=epsilon, T=T, wiring="second_order",
        params={"sigma": sigma, "velocity": velocity, "extension": extension},
    )


def make_homogeneous_wave(domain=((-4.0, 4.0), (-4.0, 4.0)), sigma: float = 0.1,
                          speed: float = 1.0, T: float = 1.0,
                          epsilon: float = 0.0) -> ProblemSpec:
    """Constant-speed wave on a Neumann box; the linearization is exact."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    box = tuple(tuple(map(float, ab)) for ab in domain)
    c2 = float(speed) ** 2

    def ic(mesh):
        u = np.exp(-sum(m ** 2 for m in mesh) / (2 * sigma ** 2))
        return np.stack([u, np.zeros_like(u)])

    def rhs(fields, x):
        lap = fields["hess"][0][:, 0]
        for h in fields["hess"][1:]:
            lap = ad.add(lap, h[:, 0])
        return [ad.mul(lap, c2)]

    return ProblemSpec(
        name="wave_homogeneous", dim=len(box), channels=2, domain=box, roi=box,
        basis_kinds=("cosine",) * len(box), boundary="neumann", ic=ic, rhs=rhs,
        a2=(c2,) * len(box), epsilon=epsilon, T=T, wiring="second_order",
        params={"sigma": sigma, "speed": speed},
    )


def make_sine_gordon(domain=(-4.0, 4.0), sigma: float = 0.1, T: float = 3.0,
                     linearization: str = "free_wave", epsilon: float = 0.1) -> ProblemSpec:
    """``u_tt = u_xx - 10 sin(u)`` with homogeneous Dirichlet walls.

    ``linearization="free_wave"`` drops the sine term; ``"klein_gordon"`` keeps
    its small-amplitude part ``-10 u``.
    """
    if linearization not in ("free_wave", "klein_gordon"):
        raise ValueError(f"unknown linearization {linearization!r}")
    lo, hi = map(float, domain)
    norm = 1.0 / (np.sqrt(2 * np.pi) * sigma)

    def ic(mesh):
        u = norm * np.exp(-mesh[0] ** 2 / (2 * sigma ** 2))
        return np.stack([u, np.zeros_like(u)])

    def rhs(fields, x):
        u = fields["u"][:, 0]
        return [ad.sub(fields["hess"][0][:, 0], ad.mul(ad.sin(u), 10.0))]

    return ProblemSpec(
        name="sinegordon", dim=1, channels=2, domain=((lo, hi),), roi=((lo, hi),),
        basis_kinds=("sine",), boundary="dirichlet", ic=ic, rhs=rhs,
        a0=-10.0 if linearization == "klein_gordon" else 0.0, a2=(1.0,),
        epsilon=epsilon, T=T, wiring="second_order",
        params={"sigma": sigma, "linearization": linearization},
    )


def make_burgers(domain=((0.0, 4.0), (0.0, 4.0)), nu: float = 0.01, T: float = 1.0,
                 ic_form: str = "printed", amplitude: float = 1.0,
                 epsilon: float = 0.1) -> ProblemSpec:
    """Viscous 2D Burgers ``u_t = -(u . grad) u + nu lap u`` on a periodic box.

    The second velocity component starts as ``cos(pi y)^2`` (``ic_form="printed"``)
    or ``cos(pi x) cos(pi y)`` (``"product"``).  The linearization is the heat
    equation with diffusivity ``nu``.
    """
    if not nu > 0:
        raise ValueError("viscosity must be positive")
    if ic_form not in ("printed", "product"):
        raise ValueError(f"unknown Burgers initial condition form {ic_form!r}")
    box = tuple(tuple(map(float, ab)) for ab in domain)

    def ic(mesh):
        X, Y = mesh
        u = np.sin(np.pi * X) * np.sin(np.pi * Y)
        if ic_form == "printed":
            v = np.cos(np.pi * Y) * np.cos(np.pi * Y)
        else:
            v = np.cos(np.pi * X) * np.cos(np.pi * Y)
        return amplitude * np.stack([u, v])

    def rhs(fields, x):
        u, grad, hess = fields["u"], fields["grad"], fields["hess"]
        out = []
        for k in range(2):
            diff = ad.mul(ad.add(hess[0][:, k], hess[1][:, k]), nu)
            adv = ad.add(ad.mul(u[:, 0], grad[0][:, k]), ad.mul(u[:, 1], grad[1][:, k]))
            out.append(ad.sub(diff, adv))
        return out

    return ProblemSpec(
        name="burgers2d", dim=2, channels=2, domain=box, roi=box,
        basis_kinds=("fourier", "fourier"), boundary="periodic", ic=ic, rhs=rhs,
        a2=(nu, nu), epsilon=epsilon, T=T, wiring="first_order", needs_grad=True,
        dealias=True, solution_channels=(0, 1),
        params={"nu": nu, "ic_form": ic_form, "amplitude": amplitude},
    )


def residual_eval(spec: ProblemSpec, u, u_t, grads, hessian_diag, x) -> Tensor:
    """Pointwise residual ``u_t - rhs`` per state channel.

    ``u`` and ``u_t`` have shape ``(n_t, channels, *points)``; ``grads`` and
    ``hessian_diag`` are per-axis lists over :attr:`ProblemSpec.derivative_channels`;
    ``x`` is the list of coordinate arrays matching ``points``.
    """
    u, u_t = ad.as_tensor(u), ad.as_tensor(u_t)
    if u.shape != u_t.shape or u.shape[1] != spec.channels:
        raise ad.ShapeError(f"u {u.shape} and u_t {u_t.shape} must both carry "
                            f"{spec.channels} channels")
    fields = {"u": u, "grad": grads, "hess": hessian_diag}
    rhs = spec.rhs(fields, x)
    res = []
    if spec.wiring == "second_order":
        res.append(ad.sub(u_t[:, 0], u[:, 1]))
    for k, r in zip(spec.equation_channels, rhs):
        if r.shape != u_t[:, k].shape:
            raise ad.ShapeError(f"right-hand side shape {r.shape} does not match {u_t[:, k].shape}")
        res.append(ad.sub(u_t[:, k], r))
    return ad.stack(res, axis=1)


def make_problem(name: str, **kw) -> ProblemSpec:
    makers = {"wave3layer": make_wave, "sinegordon": make_sine_gordon,
              "burgers2d": make_burgers, "wave_homogeneous": make_homogeneous_wave}
    if name not in makers:
        raise KeyError(f"unknown problem {name!r}; available: {', '.join(sorted(makers))}")
    return makers[name](**kw)
