"""Real trigonometric bases on boxes, collocation transforms and spectral operators.

Each axis carries one of three orthonormal families on ``[lo, hi]``:

``fourier``
    periodic; interleaved ``1, cos(th), sin(th), cos(2 th), sin(2 th), ...`` with
    ``th = pi (x - center) / half_width`` in ``[-pi, pi]``.  An even mode count
    ends with the unpaired Nyquist cosine.
``sine``
    Dirichlet; ``sin(k th)`` for ``k = 1..c`` with ``th = pi (x - lo) / length``.
``cosine``
    Neumann; ``cos(k th)`` for ``k = 0..c-1`` with the same ``th``.

Coefficient tensors keep the spatial mode axes last, so leading axes can hold
channels, time slices or batches.  Collocation nodes are uniform: the periodic
grid ``lo + length * j / n`` for Fourier axes and cell midpoints otherwise.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

KINDS = ("fourier", "sine", "cosine")


@dataclass(frozen=True)
class AxisBasis:
    kind: str
    modes: int
    lo: float
    hi: float

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown basis kind {self.kind!r}")
        if self.modes < 1:
            raise ValueError("mode count must be at least 1")
        if not self.hi > self.lo:
            raise ValueError(f"degenerate axis interval [{self.lo}, {self.hi}]")

    @property
    def length(self) -> float:
        return self.hi - self.lo

    @property
    def scale(self) -> float:
        """d(theta)/dx of the affine map onto the canonical interval."""
        if self.kind == "fourier":
            return np.pi / (0.5 * self.length)
        return np.pi / self.length

    @functools.cached_property
    def frequencies(self) -> np.ndarray:
        """Integer frequency of each mode index."""
        k = np.arange(self.modes)
        if self.kind == "fourier":
            return (k + 1) // 2
        if self.kind == "sine":
            return k + 1
        return k

    @functools.cached_property
    def wavenumbers(self) -> np.ndarray:
        """Physical wavenumbers ``pi * omega / L`` (chain-rule factor folded in)."""
        return self.scale * self.frequencies

    @functools.cached_property
    def is_sine_mode(self) -> np.ndarray:
        k = np.arange(self.modes)
        if self.kind == "fourier":
            return (k % 2 == 0) & (k > 0)
        return np.full(self.modes, self.kind == "sine")

    @property
    def has_nyquist(self) -> bool:
        return self.kind == "fourier" and self.modes % 2 == 0

    def angle(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "fourier":
            return self.scale * (x - 0.5 * (self.lo + self.hi))
        return self.scale * (x - self.lo)

    def nodes(self, n: int | None = None) -> np.ndarray:
        """Uniform collocation nodes (``n`` defaults to the mode count)."""
        n = self.modes if n is None else int(n)
        j = np.arange(n)
        if self.kind == "fourier":
            return self.lo + self.length * j / n
        return self.lo + self.length * (j + 0.5) / n

    def evaluate(self, x, derivative: int = 0) -> np.ndarray:
        """Basis functions (or their analytic x-derivatives), shape ``(len(x), modes)``."""
        th = np.outer(self.angle(x), self.frequencies)
        kap = self.wavenumbers ** derivative
        sine = self.is_sine_mode
        # d^r/dth^r of cos and sin, cycled by derivative order
        r = derivative % 4
        cos_part = [np.cos, lambda t: -np.sin(t), lambda t: -np.cos(t), np.sin][r](th)
        sin_part = [np.sin, np.cos, lambda t: -np.sin(t), lambda t: -np.cos(t)][r](th)
        values = np.where(sine, sin_part, cos_part) * kap
        return values * self.normalization

    @functools.cached_property
    def normalization(self) -> np.ndarray:
        norm = np.full(self.modes, np.sqrt(2.0 / self.length))
        if self.kind in ("fourier", "cosine"):
            norm[0] = np.sqrt(1.0 / self.length)
        return norm

    def contains(self, x, tol: float = 1e-12) -> bool:
        x = np.asarray(x)
        pad = tol * self.length
        return bool(np.all((x >= self.lo - pad) & (x <= self.hi + pad)))


@functools.lru_cache(maxsize=256)
def _analysis_matrix(axis: AxisBasis, n: int) -> np.ndarray:
    """Left inverse of the collocation matrix on ``n`` uniform nodes."""
    if n < axis.modes:
        raise ValueError(f"grid of {n} nodes under-samples {axis.modes} modes")
    V = axis.evaluate(axis.nodes(n))
    if n == axis.modes:
        cond = np.linalg.cond(V)
        if not np.isfinite(cond) or cond > 1e12:
            raise np.linalg.LinAlgError("singular collocation system")
        return np.linalg.inv(V)
    return np.linalg.pinv(V)


class SpectralBasis:
    """Tensor-product trigonometric basis with optional per-axis orthogonal maps.

    With maps ``O_i`` present, decomposition is ``O P_fourier`` and
    reconstruction is ``P_fourier^T O^T`` applied axis by axis.
    """

    def __init__(self, axes: Sequence[AxisBasis], orthogonal: Sequence | None = None):
        self.axes = tuple(axes)
        if orthogonal is not None:
            orthogonal = tuple(orthogonal)
            if len(orthogonal) != len(self.axes):
                raise ValueError("need one orthogonal map (or None) per axis")
            for O, axis in zip(orthogonal, self.axes):
                if O is not None and tuple(O.shape) != (axis.modes, axis.modes):
                    raise ValueError(f"orthogonal map shape {O.shape} does not match "
                                     f"{axis.modes} modes")
            if all(O is None for O in orthogonal):
                orthogonal = None
        self.orthogonal = orthogonal

    @property
    def dim(self) -> int:
        return len(self.axes)

    @property
    def kinds(self) -> tuple:
        return tuple(a.kind for a in self.axes)

    @property
    def shape(self) -> tuple:
        return tuple(a.modes for a in self.axes)

    @property
    def domain(self) -> tuple:
        return tuple((a.lo, a.hi) for a in self.axes)

    def with_orthogonal(self, maps: Sequence | None) -> "SpectralBasis":
        return SpectralBasis(self.axes, maps)

    def plain(self) -> "SpectralBasis":
        """The same basis without orthogonal maps."""
        return SpectralBasis(self.axes)

    def nodes(self, oversample: int = 1) -> list:
        return [a.nodes(a.modes * oversample) for a in self.axes]

    def mesh(self, axes_points: Sequence) -> list:
        return np.meshgrid(*axes_points, indexing="ij")

    def wavenumber_grid(self) -> list:
        return np.meshgrid(*[a.wavenumbers for a in self.axes], indexing="ij")

    def __repr__(self):
        desc = ", ".join(f"{a.kind}[{a.modes}]({a.lo:g},{a.hi:g})" for a in self.axes)
        tag = " +orth" if self.orthogonal is not None else ""
        return f"SpectralBasis({desc}{tag})"


def build_basis(kinds: Sequence[str] | str, modes: Sequence[int] | int,
                domain: Sequence) -> SpectralBasis:
    """Build a tensor-product basis from per-axis kinds, mode counts and intervals.

    ``domain`` is a list of ``(lo, hi)`` pairs, or a single pair for 1D.
    """
    domain = list(domain)
    if len(domain) == 2 and np.isscalar(domain[0]):
        domain = [tuple(domain)]
    d = len(domain)
    kinds = [kinds] * d if isinstance(kinds, str) else list(kinds)
    modes = [int(modes)] * d if np.isscalar(modes) else [int(m) for m in modes]
    if not (len(kinds) == len(modes) == d):
        raise ValueError("kinds, modes and domain must describe the same number of axes")
    axes = []
    for kind, m, (lo, hi) in zip(kinds, modes, domain):
        if not float(hi) - float(lo) > 0:
            raise ValueError(f"zero-width domain [{lo}, {hi}]")
        axes.append(AxisBasis(kind, m, float(lo), float(hi)))
    return SpectralBasis(axes)


# ------------------------------------------------------------- axis plumbing


def apply_along(x, matrix, axis: int, dim: int) -> Tensor:
    """Contract spatial ``axis`` (0-based among the trailing ``dim`` axes) with ``matrix``.

    ``matrix`` has shape ``(p, c)`` and maps a length-``c`` axis to length ``p``.
    """
    x = ad.as_tensor(x)
    if x.ndim == 1:
        out = apply_along(ad.reshape(x, (1, -1)), matrix, axis, dim)
        return ad.reshape(out, (out.shape[-1],))
    pos = x.ndim - dim + axis
    if pos == x.ndim - 1:
        return ad.matmul(x, ad.transpose(matrix) if isinstance(matrix, Tensor)
                         else np.ascontiguousarray(np.asarray(matrix).T))
    if pos == x.ndim - 2:
        return ad.matmul(matrix, x)
    moved = ad.swapaxes(x, pos, -1)
    mt = ad.transpose(matrix) if isinstance(matrix, Tensor) else np.asarray(matrix).T
    return ad.swapaxes(ad.matmul(moved, mt), pos, -1)


def apply_orthogonal(basis: SpectralBasis, coeffs, direction: str = "forward") -> Tensor:
    """Apply the per-axis maps ``O`` (forward) or ``O^T`` (transpose) to coefficients."""
    if direction not in ("forward", "transpose"):
        raise ValueError("direction must be 'forward' or 'transpose'")
    coeffs = ad.as_tensor(coeffs)
    if basis.orthogonal is None:
        return coeffs
    if tuple(coeffs.shape[-basis.dim:]) != basis.shape:
        raise ValueError(f"coefficient shape {coeffs.shape} does not end with {basis.shape}")
    out = coeffs
    for i, O in enumerate(basis.orthogonal):
        if O is None:
            continue
        mat = O if direction == "forward" else ad.transpose(O)
        out = apply_along(out, mat, i, basis.dim)
    return out


def _grid_sizes(samples_shape: tuple, basis: SpectralBasis) -> tuple:
    if len(samples_shape) < basis.dim:
        raise ValueError("samples have fewer axes than the basis dimension")
    return tuple(samples_shape[-basis.dim:])


def decompose(samples, basis: SpectralBasis) -> Tensor:
    """Coefficients of a field sampled on the basis' uniform collocation grid.

    With one node per mode the collocation system is solved exactly, so the
    reconstruction interpolates the samples.  Finer grids give the least
    squares fit.  Orthogonal maps, if present, are applied afterwards.
    """
    samples = ad.as_tensor(samples)
    out = samples
    for i, (axis, n) in enumerate(zip(basis.axes, _grid_sizes(samples.shape, basis))):
        out = apply_along(out, _analysis_matrix(axis, n), i, basis.dim)
    return apply_orthogonal(basis, out, "forward")


@functools.lru_cache(maxsize=256)
def _synthesis_matrix(axis: AxisBasis, raw: bytes) -> np.ndarray:
    pts = np.frombuffer(raw, dtype=np.float64)
    if not axis.contains(pts):
        raise ValueError(f"points outside [{axis.lo}, {axis.hi}]; no extrapolation")
    E = axis.evaluate(pts)
    E.setflags(write=False)
    return E


def synthesis_matrices(basis: SpectralBasis, axes_points: Sequence) -> list:
    """Per-axis basis evaluations, shape ``(len(points), modes)``; cached by value."""
    mats = []
    for axis, pts in zip(basis.axes, axes_points):
        pts = np.ascontiguousarray(pts, dtype=np.float64).reshape(-1)
        mats.append(_synthesis_matrix(axis, pts.tobytes()))
    return mats


def reconstruct_grid(coeffs, basis: SpectralBasis, axes_points: Sequence) -> Tensor:
    """Field values on the tensor grid spanned by per-axis point arrays."""
    if len(axes_points) != basis.dim:
        raise ValueError("need one point array per axis")
    coeffs = apply_orthogonal(basis, coeffs, "transpose")
    if tuple(coeffs.shape[-basis.dim:]) != basis.shape:
        raise ValueError(f"coefficient shape {coeffs.shape} does not end with {basis.shape}")
    out = coeffs
    for i, E in enumerate(synthesis_matrices(basis, axes_points)):
        out = apply_along(out, E, i, basis.dim)
    return out


def reconstruct(coeffs, basis: SpectralBasis, points) -> Tensor:
    """Field values at scattered points, ``points`` of shape ``(N, dim)``.

    Returns a tensor of shape ``coeffs.shape[:-dim] + (N,)``.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1 and basis.dim == 1:
        pts = pts[:, None]
    if pts.ndim != 2 or pts.shape[1] != basis.dim:
        raise ValueError(f"points must have shape (N, {basis.dim})")
    coeffs = apply_orthogonal(basis, coeffs, "transpose")
    mats = synthesis_matrices(basis, [pts[:, i] for i in range(basis.dim)])
    # row-wise Kronecker product of the per-axis evaluations
    phi = mats[0]
    for E in mats[1:]:
        phi = (phi[:, :, None] * E[:, None, :]).reshape(len(pts), -1)
    lead = coeffs.shape[:coeffs.ndim - basis.dim]
    flat = ad.reshape(coeffs, lead + (int(np.prod(basis.shape)),))
    if flat.ndim == 1:
        return ad.reshape(ad.matmul(ad.reshape(flat, (1, -1)), phi.T), (len(pts),))
    return ad.matmul(flat, np.ascontiguousarray(phi.T))


# ----------------------------------------------------------- linear operators


@dataclass(frozen=True)
class AxisOperator:
    """One-dimensional spectral operator along a single axis.

    ``diagonal``: ``out[k] = scale[k] * in[k]``.
    ``paired``: ``out[k] = scale[k] * in[source[k]]``, which covers first
    derivatives (cos/sin partners in Fourier, sine <-> cosine otherwise).
    ``symbol`` holds the complex Fourier symbol used for spectral analysis.
    """

    kind: str
    scale: np.ndarray
    symbol: np.ndarray
    out_axis: AxisBasis
    source: np.ndarray | None = None

    def apply(self, x, axis: int, dim: int):
        pos = x.ndim - dim + axis
        if self.kind != "diagonal":
            x = ad.take(x, self.source, axis=pos)
        shape = [1] * dim
        shape[axis] = len(self.scale)
        scale = np.broadcast_to(self.scale.reshape(shape), x.shape[x.ndim - dim:])
        return ad.mul(x, np.ascontiguousarray(scale))


@dataclass
class LinearSpectralOperator:
    """Dense per-mode multiplier plus a sum of paired per-axis products.

    ``kind`` is ``"diagonal"`` when no paired terms are present, in which case
    the operator is the Hadamard multiplier :attr:`values`.  Otherwise it is
    ``"paired-block"`` and couples (cos, sin) partners or complementary
    sine/cosine families.
    """

    basis: SpectralBasis
    diagonal: np.ndarray | None = None
    terms: list = field(default_factory=list)  # [(coef, {axis: AxisOperator})]

    def __post_init__(self):
        self.basis = self.basis.plain()
        if self.diagonal is not None:
            self.diagonal = np.broadcast_to(np.asarray(self.diagonal, dtype=np.float64),
                                            self.basis.shape).copy()
        outs = {self._out_axes(t) for _, t in self.terms}
        if self.diagonal is not None:
            outs.add(self.basis.axes)
        if len(outs) > 1:
            raise ValueError("all terms must map into the same output basis")

    def _out_axes(self, factors) -> tuple:
        return tuple(factors[i].out_axis if i in factors else a
                     for i, a in enumerate(self.basis.axes))

    @property
    def out_basis(self) -> SpectralBasis:
        if not self.terms:
            return self.basis
        return SpectralBasis(self._out_axes(self.terms[0][1]))

    @property
    def kind(self) -> str:
        return "diagonal" if not self.terms else "paired-block"

    @property
    def values(self) -> np.ndarray:
        """Per-mode multiplier (diagonal operators only)."""
        if self.terms:
            raise ValueError("paired-block operators have no single multiplier array")
        if self.diagonal is None:
            return np.zeros(self.basis.shape)
        return self.diagonal

    def symbol(self) -> np.ndarray:
        """Complex Fourier symbol per input mode; these are the operator's eigenvalues."""
        d = self.basis.dim
        total = np.zeros(self.basis.shape, dtype=np.complex128)
        if self.diagonal is not None:
            total += self.diagonal
        for coef, factors in self.terms:
            term = np.full(self.basis.shape, coef, dtype=np.complex128)
            for i, f in factors.items():
                shape = [1] * d
                shape[i] = -1
                term = term * f.symbol.reshape(shape)
            total += term
        return total

    def apply(self, coeffs) -> Tensor:
        coeffs = ad.as_tensor(coeffs)
        d = self.basis.dim
        if tuple(coeffs.shape[-d:]) != self.basis.shape:
            raise ValueError(f"operator for {self.basis.shape} applied to {coeffs.shape}")
        total = None
        if self.diagonal is not None:
            total = ad.mul(coeffs, self.diagonal)
        for coef, factors in self.terms:
            out = coeffs
            for i, f in sorted(factors.items()):
                out = f.apply(out, i, d)
            out = ad.mul(out, float(coef))
            total = out if total is None else ad.add(total, out)
        if total is None:
            return ad.mul(coeffs, 0.0)
        return total

    def __call__(self, coeffs) -> Tensor:
        return self.apply(coeffs)


def _first_derivative(axis: AxisBasis) -> AxisOperator:
    kap = axis.wavenumbers
    c = axis.modes
    if axis.kind == "fourier":
        idx = np.arange(c)
        source = idx.copy()
        scale = np.zeros(c)
        cos_idx = idx[(idx % 2 == 1)]
        paired = cos_idx[cos_idx + 1 < c]
        # d/dx (a cos + b sin) = kappa (b cos - a sin)
        source[paired] = paired + 1
        scale[paired] = kap[paired]
        source[paired + 1] = paired
        scale[paired + 1] = -kap[paired + 1]
        symbol = 1j * kap * (scale != 0)
        return AxisOperator("paired", scale, symbol, axis, source)
    if axis.kind == "sine":
        out_axis = AxisBasis("cosine", c + 1, axis.lo, axis.hi)
        kap_out = out_axis.wavenumbers
        source = np.concatenate([[0], np.arange(c)])
        scale = kap_out.copy()
        scale[0] = 0.0
        # sqrt(2/L) sin -> sqrt(2/L) kappa cos; the k=0 cosine is never hit
        return AxisOperator("paired", scale, 1j * kap, out_axis, source)
    if c < 2:
        raise ValueError("first derivative of a single cosine mode is not representable")
    out_axis = AxisBasis("sine", c - 1, axis.lo, axis.hi)
    kap_out = out_axis.wavenumbers
    source = np.arange(1, c)
    return AxisOperator("paired", -kap_out, 1j * kap, out_axis, source)


def derivative_operator(basis: SpectralBasis, axis: int, order: int) -> LinearSpectralOperator:
    """Exact spectral ``d/dx_axis`` (order 1) or ``d^2/dx_axis^2`` (order 2).

    Order 2 is diagonal with entries ``-kappa^2`` for every family.  Order 1 on a
    Fourier axis rotates (cos, sin) partners; the unpaired Nyquist cosine maps
    to zero, which is exact on the collocation grid where its derivative
    vanishes.  Order 1 on sine/cosine axes maps into the complementary family.
    """
    if order not in (1, 2):
        raise ValueError("derivative order must be 1 or 2")
    if not 0 <= axis < basis.dim:
        raise ValueError(f"axis {axis} out of range for a {basis.dim}-D basis")
    ax = basis.axes[axis]
    if order == 2:
        shape = [1] * basis.dim
        shape[axis] = -1
        return LinearSpectralOperator(basis, diagonal=-(ax.wavenumbers ** 2).reshape(shape))
    return LinearSpectralOperator(basis, terms=[(1.0, {axis: _first_derivative(ax)})])


def multiplier_from_linear_pde(a0: float, a1: Sequence[float] | None,
                               a2, basis: SpectralBasis) -> LinearSpectralOperator:
    """Multiplier of ``a0 u + sum a1_i du/dx_i + sum a2_ij d2u/dx_i dx_j``.

    Diagonal whenever no odd-order or mixed terms are present.  Odd-order and
    mixed terms are only representable on Fourier axes.
    """
    d = basis.dim
    a1 = np.zeros(d) if a1 is None else np.asarray(a1, dtype=np.float64).reshape(d)
    a2 = np.zeros((d, d)) if a2 is None else np.asarray(a2, dtype=np.float64)
    if a2.ndim == 0:
        a2 = a2 * np.eye(d)
    elif a2.ndim == 1:
        a2 = np.diag(a2)
    if a2.shape != (d, d):
        raise ValueError(f"second-order coefficients must be {d}x{d}")
    plain = basis.plain()
    terms = []
    diag = np.full(basis.shape, float(a0))
    for i in range(d):
        if a2[i, i] != 0.0:
            k = plain.axes[i].wavenumbers
            shape = [1] * d
            shape[i] = -1
            diag = diag - a2[i, i] * (k ** 2).reshape(shape)

    def odd_factor(i):
        if plain.axes[i].kind != "fourier":
            raise ValueError(f"odd-order term on {plain.axes[i].kind} axis {i} leaves "
                             "the representable space")
        return _first_derivative(plain.axes[i])

    for i in range(d):
        if a1[i] != 0.0:
            terms.append((float(a1[i]), {i: odd_factor(i)}))
    for i in range(d):
        for j in range(d):
            if i != j and a2[i, j] != 0.0:
                terms.append((float(a2[i, j]), {i: odd_factor(i), j: odd_factor(j)}))
    return LinearSpectralOperator(plain, diagonal=diag, terms=terms)


