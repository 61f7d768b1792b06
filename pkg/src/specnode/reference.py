"""Classical pseudo-spectral RK4 solver used as ground truth.

Linear terms (the problem's linearization) act exactly in coefficient space.
The remaining right-hand side is evaluated pointwise on the collocation grid
and projected back; for problems flagged ``dealias`` the projected remainder
is truncated by the 2/3 rule each stage.  No tape is ever recorded.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .basis import SpectralBasis, decompose, derivative_operator, reconstruct_grid
from .integrate import rk4_amplification
from .problems import ProblemSpec


class InstabilityError(FloatingPointError):
    """The reference solution blew up."""


class IndeterminateOrderError(ArithmeticError):
    """Errors are at the rounding floor, so no order can be measured."""


@dataclass
class ReferenceSolution:
    problem: str
    times: np.ndarray
    axes: list                   # per-axis evaluation points
    values: np.ndarray           # (n_t, n_solution_channels, *grid)
    dt: float
    dx: tuple
    meta: dict = field(default_factory=dict)
    final_state: np.ndarray | None = None

    @property
    def dims(self) -> int:
        return len(self.axes)

    def window(self, t_samples: int) -> "ReferenceSolution":
        """The first ``t_samples`` output times."""
        return ReferenceSolution(self.problem, self.times[:t_samples], self.axes,
                                 self.values[:t_samples], self.dt, self.dx, dict(self.meta))


def dealias_mask(basis: SpectralBasis) -> np.ndarray:
    """2/3-rule mask: keep frequencies up to two thirds of the resolved maximum."""
    masks = []
    for ax in basis.axes:
        top = ax.modes // 2 if ax.kind == "fourier" else ax.modes
        masks.append(ax.frequencies <= (2.0 / 3.0) * top)
    out = masks[0]
    for m in masks[1:]:
        out = np.logical_and.outer(out, m)
    return out.astype(np.float64)


class _RightHandSide:
    def __init__(self, spec: ProblemSpec, basis: SpectralBasis):
        self.spec = spec
        self.basis = basis
        self.nodes = basis.nodes()
        self.x = np.meshgrid(*self.nodes, indexing="ij")
        self.M = spec.multiplier(basis)
        self.mask = dealias_mask(basis) if spec.dealias else None
        d = basis.dim
        self.d1 = [derivative_operator(basis, i, 1) for i in range(d)] if spec.needs_grad else []
        self.d2 = [derivative_operator(basis, i, 2) for i in range(d)]
        self.dchan = list(spec.derivative_channels)

    def __call__(self, state: np.ndarray) -> np.ndarray:
        spec, basis = self.spec, self.basis
        with ad.no_grad():
            S = state[None]
            Sd = S[:, self.dchan]
            fields = {
                "u": reconstruct_grid(S, basis, self.nodes),
                "grad": [reconstruct_grid(op(Sd), op.out_basis, self.nodes) for op in self.d1],
                "hess": [reconstruct_grid(op(Sd), basis, self.nodes) for op in self.d2],
            }
            rhs = spec.rhs(fields, self.x)
            out = np.empty_like(state)
            if spec.wiring == "second_order":
                out[0] = state[1]
            for j, (k, r) in enumerate(zip(spec.equation_channels, rhs)):
                lin_chan = 0 if spec.wiring == "second_order" else k
                rem = ad.sub(r, spec.linear_part(fields, self.dchan.index(lin_chan)))
                rem_hat = decompose(rem, basis).data[0]
                if self.mask is not None:
                    rem_hat = rem_hat * self.mask
                out[k] = self.M(state[lin_chan]).data + rem_hat
        return out


def _rk4(f, s, h):
    k1 = f(s)
    k2 = f(s + 0.5 * h * k1)
    k3 = f(s + 0.5 * h * k2)
    k4 = f(s + h * k3)
    return s + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _check_linear_stability(rhs: _RightHandSide, h: float):
    lam = rhs.M.symbol()
    if rhs.spec.wiring == "second_order":
        lam = np.sqrt(lam.astype(np.complex128))
        amp = np.maximum(np.abs(rk4_amplification(lam * h)), np.abs(rk4_amplification(-lam * h)))
    else:
        amp = np.abs(rk4_amplification(lam * h))
    if np.max(amp) > 1.0 + 1e-12:
        raise InstabilityError(f"dt={h:.3g} puts the linear spectrum outside the RK4 region")


def solve_reference(spec: ProblemSpec, dt: float, modes: Sequence[int] | int,
                    eval_axes: Sequence | None = None, out_step: float | None = None,
                    t_end: float | None = None, growth_limit: float = 1e6) -> ReferenceSolution:
    """Evolve ``spec`` from its IC and sample the solution channels.

    Outputs are taken every ``out_step`` (default: ``dt``) up to ``t_end``
    (default: ``spec.T``).  The internal step is the largest step not above
    ``dt`` that divides ``out_step`` exactly.
    """
    basis = spec.basis(modes)
    rhs = _RightHandSide(spec, basis)
    t_end = spec.T if t_end is None else float(t_end)
    out_step = dt if out_step is None else float(out_step)
    n_out = int(round(t_end / out_step))
    if abs(n_out * out_step - t_end) > 1e-9 * max(1.0, t_end):
        raise ValueError("t_end must be a whole number of output steps")
    sub = max(1, int(np.ceil(out_step / dt - 1e-9)))
    h = out_step / sub
    _check_linear_stability(rhs, h)
    eval_axes = basis.nodes() if eval_axes is None else [np.asarray(a, dtype=np.float64) for a in eval_axes]

    state = decompose(spec.initial_samples(basis.nodes()), basis).data
    ch = list(spec.solution_channels)
    scale = max(1.0, float(np.max(np.abs(state))))

    def sample(s):
        with ad.no_grad():
            return reconstruct_grid(s[ch], basis, eval_axes).data

    frames = [sample(state)]
    for j in range(n_out):
        for _ in range(sub):
            state = _rk4(rhs, state, h)
        peak = float(np.max(np.abs(state)))
        if not np.isfinite(peak) or peak > growth_limit * scale:
            raise InstabilityError(f"reference solution grew past {growth_limit:g}x its initial "
                                   f"size by t={(j + 1) * out_step:.4g}")
        frames.append(sample(state))
    dx = tuple(float(a.length / a.modes) for a in basis.axes)
    meta = {"modes": list(basis.shape), "substeps": sub, "dealias": "2/3" if spec.dealias else "none",
            "basis": list(spec.basis_kinds), "integrator": "rk4"}
    return ReferenceSolution(spec.name, out_step * np.arange(n_out + 1), list(eval_axes),
                             np.array(frames), h, dx, meta, final_state=state)


@dataclass(frozen=True)
class ConvergenceReport:
    order: float
    errors: tuple
    ratio: float


def convergence_order(spec: ProblemSpec, dt: float, modes, t_end: float | None = None,
                      floor: float = 1e-13) -> ConvergenceReport:
    """Observed temporal order from runs at ``dt``, ``dt/2``, ``dt/4``.

    The ``dt/4`` run stands in for the exact solution; errors are L2 norms of
    the final coefficient vectors (equal to field L2 norms by Parseval).
    """
    t_end = spec.T if t_end is None else float(t_end)
    n = max(1, int(round(t_end / dt)))
    finals = []
    for k in (1, 2, 4):
        sol = solve_reference(spec, t_end / (n * k), modes, out_step=t_end, t_end=t_end)
        finals.append(sol.final_state)
    e1 = float(np.linalg.norm(finals[0] - finals[2]))
    e2 = float(np.linalg.norm(finals[1] - finals[2]))
    size = float(np.linalg.norm(finals[2]))
    if e2 <= floor * max(size, 1.0) or e1 <= floor * max(size, 1.0):
        raise IndeterminateOrderError(f"errors ({e1:.2e}, {e2:.2e}) are at the rounding floor")
    return ConvergenceReport(float(np.log2(e1 / e2)), (e1, e2), e1 / e2)


# -------------------------------------------------------------------- I/O


def _header_line(sol: ReferenceSolution, extra: dict | None) -> str:
    items = {"problem": sol.problem, "dims": sol.dims, "dt": repr(float(sol.dt)),
             "dx": ",".join(repr(float(d)) for d in sol.dx)}
    for k, v in (extra or {}).items():
        items[k] = v
    return "# " + " ".join(f"{k}={v}" for k, v in items.items())


def write_csv(path, sol: ReferenceSolution, extra: dict | None = None, precision: int = 17):
    """Rows ``t, x[, y], channel values`` in C order; 17 digits round-trip exactly."""
    fmt = f"{{:.{precision}g}}"
    coords = np.meshgrid(*sol.axes, indexing="ij")
    flat = [c.ravel() for c in coords]
    n_ch = sol.values.shape[1]
    names = ["t"] + ["x", "y", "z"][:sol.dims] + [f"c{k}" for k in range(n_ch)]
    lines = [_header_line(sol, extra), "# meta=" + json.dumps(sol.meta, sort_keys=True),
             ",".join(names)]
    for i, t in enumerate(sol.times):
        vals = sol.values[i].reshape(n_ch, -1)
        ts = fmt.format(t)
        for j in range(flat[0].size):
            row = [ts] + [fmt.format(f[j]) for f in flat] + [fmt.format(vals[k, j]) for k in range(n_ch)]
            lines.append(",".join(row))
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_csv(path) -> tuple[ReferenceSolution, dict]:
    with open(path, encoding="ascii") as fh:
        head = fh.readline()[2:].split()
        meta_line = fh.readline()
        fh.readline()
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    header = dict(item.split("=", 1) for item in head)
    meta = json.loads(meta_line.split("=", 1)[1])
    d = int(header["dims"])
    times = np.unique(data[:, 0])
    axes = [np.unique(data[:, 1 + i]) for i in range(d)]
    shape = (len(times), data.shape[1] - 1 - d) + tuple(len(a) for a in axes)
    vals = data[:, 1 + d:].reshape((len(times), -1, shape[1])).transpose(0, 2, 1).reshape(shape)
    sol = ReferenceSolution(header["problem"], times, axes, vals, float(header["dt"]),
                            tuple(float(v) for v in header["dx"].split(",")), meta)
    return sol, header


_BIN_MAGIC = b"SPNREF\x00\x01"
_BIN_HEAD = struct.Struct("<8sIII3Id3d32sI")


def write_binary(path, sol: ReferenceSolution, extra: dict | None = None):
    """Little-endian layout: fixed header, JSON metadata, then float64 arrays.

    Header: magic (8 bytes), dims, n_t, n_channels, three grid sizes (unused
    ones zero), dt, three dx values, problem name (32 bytes, NUL padded),
    metadata length.  Payload: times, each axis, values in C order.
    """
    dims = sol.dims
    sizes = [len(a) for a in sol.axes] + [0] * (3 - dims)
    dx = list(sol.dx) + [0.0] * (3 - dims)
    meta = json.dumps({"meta": sol.meta, "extra": extra or {}}, sort_keys=True).encode()
    head = _BIN_HEAD.pack(_BIN_MAGIC, dims, len(sol.times), sol.values.shape[1], *sizes,
                          float(sol.dt), *dx, sol.problem.encode()[:32], len(meta))
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(meta)
        for arr in [sol.times, *sol.axes, sol.values]:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_binary(path) -> tuple[ReferenceSolution, dict]:
    with open(path, "rb") as fh:
        raw = fh.read()
    fields_ = _BIN_HEAD.unpack_from(raw, 0)
    magic, dims, n_t, n_ch = fields_[:4]
    if magic != _BIN_MAGIC:
        raise ValueError(f"{path} is not a reference binary file")
    sizes = fields_[4:7][:dims]
    dt = fields_[7]
    dx = tuple(fields_[8:11][:dims])
    name = fields_[11].rstrip(b"\x00").decode()
    off = _BIN_HEAD.size
    meta = json.loads(raw[off:off + fields_[12]])
    off += fields_[12]
    flat = np.frombuffer(raw, dtype="<f8", offset=off).astype(np.float64)
    times, pos = flat[:n_t], n_t
    axes = []
    for s in sizes:
        axes.append(flat[pos:pos + s])
        pos += s
    values = flat[pos:].reshape((n_t, n_ch) + tuple(sizes))
    return ReferenceSolution(name, times, axes, values, dt, dx, meta["meta"]), meta["extra"]
