"""Neumann heat kernel, spectral calculus and Sobolev machinery on boxes.

The generator is (1/2)Laplacian with reflecting boundary, so the
one-dimensional kernel on an interval of length L has eigenpairs
``cos(k pi x'/L)`` with ``lambda_k = (pi^2/2)(k/L)^2`` (x' the box-local
coordinate).  Two complementary evaluations are provided:

* Images: a folded-Gaussian sum, rapidly convergent for small t;
* Spectral: the cosine eigenexpansion, rapidly convergent for large t.

Grid fields live on endpoint-uniform tensor grids; the trapezoid rule
is exactly the discrete cosine orthogonality (DCT-I), which makes
projection, synthesis and semigroup application spectrally exact for
band-limited data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable

import numpy as np
from scipy.fft import dct

from .geometry import Box

_LOG10 = math.log(10.0)


class KernelMode(Enum):
    IMAGES = "images"
    SPECTRAL = "spectral"
    AUTO = "auto"


@dataclass(frozen=True)
class KernelConfig:
    """Evaluation policy for the Neumann kernel.

    ``truncation`` is the number of image terms per side in Images mode.
    In Spectral mode the mode cutoff K is chosen adaptively so that
    ``exp(-lambda_K t) < spectral_eps`` (or ``spectral_modes`` if set).
    ``t_switch_factor`` scales the Images/Spectral crossover:
    t_switch = t_switch_factor * L^2.
    """

    mode: KernelMode = KernelMode.AUTO
    truncation: int = 8
    spectral_modes: int | None = None
    spectral_eps: float = 1e-14
    t_switch_factor: float = 0.25

    def __post_init__(self):
        if self.truncation < 1:
            raise ValueError("truncation must be >= 1")
        if not (self.spectral_eps > 0):
            raise ValueError("spectral_eps must be positive")


DEFAULT_KERNEL_CONFIG = KernelConfig()


def _gauss(t: float, z) -> np.ndarray:
    return np.exp(-np.asarray(z) ** 2 / (2.0 * t)) / math.sqrt(2.0 * math.pi * t)


def _spectral_cutoff(t: float, length: float, cfg: KernelConfig) -> int:
    if cfg.spectral_modes is not None:
        return cfg.spectral_modes
    # smallest K with exp(-lambda_K t) < eps, lambda_K = (pi^2/2)(K/L)^2
    target = -math.log(cfg.spectral_eps)
    k = math.sqrt(2.0 * target / t) * length / math.pi
    return max(int(math.ceil(k)), 4)


def kernel_eval_1d(t: float, u, v, lo: float, hi: float,
                   cfg: KernelConfig = DEFAULT_KERNEL_CONFIG) -> np.ndarray:
    """Neumann heat kernel on [lo, hi] for generator (1/2) d^2/dx^2.

    Broadcasts over ``u`` and ``v``.  Nonpositive times are rejected;
    the kernel is a density in its second argument:
    ``int p(t,u,v) dv = 1``.
    """
    if not (t > 0.0) or not math.isfinite(t):
        raise ValueError("time must be positive and finite")
    length = hi - lo
    if not (length > 0):
        raise ValueError("need hi > lo")
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    mode = cfg.mode
    if mode is KernelMode.AUTO:
        mode = KernelMode.IMAGES if t < cfg.t_switch_factor * length**2 else KernelMode.SPECTRAL
    if mode is KernelMode.IMAGES:
        up = u - lo
        vp = v - lo
        acc = np.zeros(np.broadcast(u, v).shape, dtype=float)
        for n in range(-cfg.truncation, cfg.truncation + 1):
            shift = 2.0 * n * length
            acc = acc + _gauss(t, up - vp - shift) + _gauss(t, up + vp - shift)
        return acc
    kmax = _spectral_cutoff(t, length, cfg)
    up = (u - lo) / length
    vp = (v - lo) / length
    acc = np.full(np.broadcast(u, v).shape, 1.0 / length)
    for k in range(1, kmax + 1):
        lam = 0.5 * (math.pi * k / length) ** 2
        acc = acc + (2.0 / length) * math.exp(-lam * t) * np.cos(k * math.pi * up) * np.cos(k * math.pi * vp)
    return acc


def kernel_eval(t: float, x, y, box: Box,
                cfg: KernelConfig = DEFAULT_KERNEL_CONFIG) -> float:
    """Product-form Neumann kernel on a box (identity diffusion)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    val = 1.0
    for i in range(box.d):
        val *= float(kernel_eval_1d(t, x[i], y[i], box.lo[i], box.hi[i], cfg))
    return val


# ---------------------------------------------------------------------------
# Grid fields and exact cosine calculus


def _dct1_coeffs(values: np.ndarray, axis: int, length: float) -> np.ndarray:
    """Trapezoid projection onto orthonormal cosine modes along one axis."""
    n = values.shape[axis] - 1
    c = dct(values, type=1, axis=axis) * (length / (2.0 * n))
    scale = np.full(n + 1, math.sqrt(2.0 / length))
    scale[0] = 1.0 / math.sqrt(length)
    shape = [1] * values.ndim
    shape[axis] = n + 1
    return c * scale.reshape(shape)


def _dct1_synth(coeffs: np.ndarray, axis: int, length: float) -> np.ndarray:
    """Evaluate an orthonormal cosine series on the endpoint grid."""
    n = coeffs.shape[axis] - 1
    scale = np.full(n + 1, math.sqrt(2.0 / length))
    scale[0] = 1.0 / math.sqrt(length)
    shape = [1] * coeffs.ndim
    shape[axis] = n + 1
    b = coeffs * scale.reshape(shape)
    # sum_k b_k cos(pi k j / n) = (DCT1(b)_j + b_0 + (-1)^j b_n) / 2
    out = dct(b, type=1, axis=axis)
    b0 = np.take(b, [0], axis=axis)
    bn = np.take(b, [n], axis=axis)
    signs = np.where(np.arange(n + 1) % 2 == 0, 1.0, -1.0).reshape(shape)
    return 0.5 * (out + b0 + signs * bn)


@dataclass(frozen=True)
class Grid:
    """Endpoint-uniform tensor grid on a box with trapezoid quadrature."""

    box: Box
    n: tuple  # cells per axis; nodes are n+1 per axis

    def __post_init__(self):
        if len(self.n) != self.box.d:
            raise ValueError("cell tuple must match box dimension")
        if any(m < 2 for m in self.n):
            raise ValueError("need at least 2 cells per axis")

    @property
    def shape(self) -> tuple:
        return tuple(m + 1 for m in self.n)

    def axis_nodes(self, i: int) -> np.ndarray:
        return np.linspace(self.box.lo[i], self.box.hi[i], self.n[i] + 1)

    def axis_weights(self, i: int) -> np.ndarray:
        h = (self.box.hi[i] - self.box.lo[i]) / self.n[i]
        w = np.full(self.n[i] + 1, h)
        w[0] = w[-1] = 0.5 * h
        return w

    def weights(self) -> np.ndarray:
        w = self.axis_weights(0)
        for i in range(1, self.box.d):
            w = np.multiply.outer(w, self.axis_weights(i))
        return w

    def meshgrid(self):
        axes = [self.axis_nodes(i) for i in range(self.box.d)]
        return np.meshgrid(*axes, indexing="ij")

    def sample(self, f) -> np.ndarray:
        """Sample a vectorized callable f(*coordinate arrays) on the grid."""
        return np.asarray(f(*self.meshgrid()), dtype=float)

    def integrate(self, values: np.ndarray) -> float:
        return float(np.sum(values * self.weights()))

    def to_coeffs(self, values: np.ndarray) -> np.ndarray:
        c = np.asarray(values, dtype=float)
        for i in range(self.box.d):
            c = _dct1_coeffs(c, i, self.box.hi[i] - self.box.lo[i])
        return c

    def from_coeffs(self, coeffs: np.ndarray) -> np.ndarray:
        v = np.asarray(coeffs, dtype=float)
        for i in range(self.box.d):
            v = _dct1_synth(v, i, self.box.hi[i] - self.box.lo[i])
        return v

    def lambdas(self) -> np.ndarray:
        """Eigenvalue array over the retained mode lattice."""
        lam = np.zeros(self.shape)
        for i in range(self.box.d):
            k = np.arange(self.n[i] + 1, dtype=float)
            li = 0.5 * (math.pi * k / (self.box.hi[i] - self.box.lo[i])) ** 2
            shape = [1] * self.box.d
            shape[i] = self.n[i] + 1
            lam = lam + li.reshape(shape)
        return lam

    def semigroup_factor(self, t: float) -> np.ndarray:
        if t < 0 or not math.isfinite(t):
            raise ValueError("time must be nonnegative and finite")
        return np.exp(-t * self.lambdas())

    def apply_semigroup(self, t: float, values: np.ndarray) -> np.ndarray:
        """P_t on grid data via the exact eigenexpansion of the grid modes."""
        return self.from_coeffs(self.to_coeffs(values) * self.semigroup_factor(t))

    def gradient(self, values: np.ndarray) -> list:
        """Spectral gradient: cosine series differentiated termwise."""
        c = self.to_coeffs(values)
        out = []
        for i in range(self.box.d):
            length = self.box.hi[i] - self.box.lo[i]
            k = np.arange(self.n[i] + 1, dtype=float)
            shape = [1] * self.box.d
            shape[i] = self.n[i] + 1
            dc = -c * (math.pi * k / length).reshape(shape)
            out.append(_sin_synth(dc, i, length, self._local_frac(i)))
        return out

    def _local_frac(self, i: int) -> np.ndarray:
        n = self.n[i]
        return np.arange(n + 1) / n


def _sin_synth(coeffs: np.ndarray, axis: int, length: float, frac: np.ndarray) -> np.ndarray:
    """Evaluate sum_k b_k * norm_k * sin(k pi x') on the endpoint grid.

    Small direct summation (O(n^2) per axis); used only for gradients of
    smooth backward fields, where n is a few hundred.
    """
    n = coeffs.shape[axis] - 1
    norm = np.full(n + 1, math.sqrt(2.0 / length))
    norm[0] = 1.0 / math.sqrt(length)
    k = np.arange(n + 1)
    table = np.sin(np.pi * np.outer(frac, k)) * norm  # (nodes, modes)
    moved = np.moveaxis(coeffs, axis, -1)
    out = moved @ table.T
    return np.moveaxis(out, -1, axis)


# ---------------------------------------------------------------------------
# Eigenmodes, surface operator, Weyl counting, negative Sobolev norms


@dataclass(frozen=True)
class EigenMode:
    """A Neumann eigenmode cos-product on a box, orthonormal in L^2."""

    k: tuple
    box: Box

    def __post_init__(self):
        if len(self.k) != self.box.d:
            raise ValueError("mode multi-index must match box dimension")
        if any(ki < 0 for ki in self.k):
            raise ValueError("mode indices must be nonnegative")

    @property
    def lam(self) -> float:
        return 0.5 * sum(
            (math.pi * ki / (b - a)) ** 2
            for ki, a, b in zip(self.k, self.box.lo, self.box.hi)
        )

    def __call__(self, *coords) -> np.ndarray:
        return eigen_eval(self.k, coords, self.box)


def eigen_eval(k: Iterable[int], coords, box: Box) -> np.ndarray:
    """Evaluate the orthonormal eigenmode with multi-index k.

    ``coords`` is a sequence of per-axis coordinate arrays (broadcastable).
    """
    k = tuple(k)
    vals = 1.0
    for i, ki in enumerate(k):
        length = box.hi[i] - box.lo[i]
        xp = (np.asarray(coords[i], dtype=float) - box.lo[i]) / length
        norm = 1.0 / math.sqrt(length) if ki == 0 else math.sqrt(2.0 / length)
        vals = vals * norm * np.cos(ki * math.pi * xp)
    return vals


def surface_op(theta: float, g, x, box: Box, interface_hi: bool,
               cfg: KernelConfig = DEFAULT_KERNEL_CONFIG,
               tangential_nodes: int = 256) -> float:
    """The surface heat operator (G_theta g)(x) = int_I p(theta,x,z) g(z) dsigma.

    The interface is the facet of ``box`` where the last coordinate equals
    its upper (``interface_hi=True``) or lower end.  For d = 1 the surface
    measure is counting measure at the single facet point, so the value is
    ``p(theta, x, iface) * g(iface)``.  For d >= 2 the kernel factorizes and
    the tangential integral is evaluated by trapezoid quadrature.
    """
    if not (theta > 0):
        raise ValueError("theta must be positive")
    x = np.asarray(x, dtype=float)
    d = box.d
    iface = box.hi[d - 1] if interface_hi else box.lo[d - 1]
    pn = float(kernel_eval_1d(theta, x[d - 1], iface, box.lo[d - 1], box.hi[d - 1], cfg))
    if d == 1:
        return pn * float(g(np.asarray(iface)))
    nodes = [np.linspace(box.lo[i], box.hi[i], tangential_nodes + 1) for i in range(d - 1)]
    mesh = np.meshgrid(*nodes, indexing="ij")
    gv = np.asarray(g(*mesh), dtype=float)
    pk = np.ones_like(gv)
    for i in range(d - 1):
        pk = pk * kernel_eval_1d(theta, x[i], mesh[i], box.lo[i], box.hi[i], cfg)
    w = None
    for i in range(d - 1):
        h = (box.hi[i] - box.lo[i]) / tangential_nodes
        wi = np.full(tangential_nodes + 1, h)
        wi[0] = wi[-1] = 0.5 * h
        w = wi if w is None else np.multiply.outer(w, wi)
    return float(np.sum(pk * gv * w))


def weyl_count(x: float, d: int, lengths: tuple | None = None) -> int:
    """Number of Neumann eigenvalues <= x on a d-box (unit box default).

    Eigenvalues are (pi^2/2) sum (k_i/L_i)^2 over nonnegative multi-indices.
    """
    if x < 0:
        return 0
    if lengths is None:
        lengths = (1.0,) * d
    # count lattice points with sum (k_i/L_i)^2 <= 2x/pi^2
    r2 = 2.0 * x / math.pi**2
    kmax = [int(math.floor(math.sqrt(r2) * L)) for L in lengths]
    axes = [np.arange(km + 1, dtype=float) / L for km, L in zip(kmax, lengths)]
    acc = np.zeros(1)
    for a in axes:
        acc = (acc[:, None] + (a**2)[None, :]).ravel()
        acc = acc[acc <= r2 + 1e-12]
    return int(acc.size)


@dataclass(frozen=True)
class DualVector:
    """A distribution over the pair of boxes in eigencoordinates.

    ``entries_plus`` / ``entries_minus`` are sequences of
    ``(lambda_k, coefficient)`` pairs, i.e. the pairings of the
    distribution with the orthonormal eigenmodes of each box.
    """

    entries_plus: tuple = ()
    entries_minus: tuple = ()


def h_norm(mu: DualVector, alpha: float) -> float:
    """Negative-Sobolev norm: sqrt(sum (1+lambda)^(-alpha) c^2), both species."""
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    total = 0.0
    for lam, c in tuple(mu.entries_plus) + tuple(mu.entries_minus):
        if lam < 0:
            raise ValueError("negative eigenvalue in dual vector")
        total += (1.0 + lam) ** (-alpha) * c * c
    return math.sqrt(total)
