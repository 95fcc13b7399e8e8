"""Periodic lattice, spectral transforms and the weighted norms used by the estimates.

The box is ``[-L/2, L/2)^n`` sampled with ``N`` points per axis.  Spectral
coefficients follow the continuous Fourier transform convention

    f_hat(k) = (2 pi)^(-n/2) * h^n * sum_j f(x_j) exp(-i k . x_j),

so that the spectral L2 norm ``sqrt((2 pi / L)^n * sum |f_hat|^2)`` equals the
physical quadrature norm ``sqrt(h^n * sum |f|^2)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Literal, Union

import numpy as np
import scipy.fft as sfft

MAX_SITES = 2 ** 24

Space = Literal["physical", "spectral"]


class GridError(ValueError):
    pass


class RepresentationError(ValueError):
    pass


@dataclass(frozen=True)
class Grid:
    dim: int
    extent: float
    points_per_dim: int
    workers: int = field(default=1, compare=False)

    @property
    def spacing(self) -> float:
        return self.extent / self.points_per_dim

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.points_per_dim,) * self.dim

    @property
    def size(self) -> int:
        return self.points_per_dim ** self.dim

    @property
    def cell_volume(self) -> float:
        return self.spacing ** self.dim

    @property
    def dk(self) -> float:
        return 2.0 * np.pi / self.extent

    @cached_property
    def axis_coordinates(self) -> np.ndarray:
        n = self.points_per_dim
        return -0.5 * self.extent + self.spacing * np.arange(n)

    @cached_property
    def axis_frequencies(self) -> np.ndarray:
        # FFT ordering; the Nyquist row is -N/2 * dk.
        return 2.0 * np.pi * np.fft.fftfreq(self.points_per_dim, d=self.spacing)

    @cached_property
    def coords(self) -> tuple[np.ndarray, ...]:
        """Broadcastable coordinate arrays, one per axis."""
        return _broadcast_axes(self.axis_coordinates, self.dim)

    @cached_property
    def freqs(self) -> tuple[np.ndarray, ...]:
        return _broadcast_axes(self.axis_frequencies, self.dim)

    @cached_property
    def radius(self) -> np.ndarray:
        r2 = sum(c ** 2 for c in self.coords)
        return np.sqrt(np.broadcast_to(r2, self.shape))

    @cached_property
    def k_abs(self) -> np.ndarray:
        k2 = sum(k ** 2 for k in self.freqs)
        return np.sqrt(np.broadcast_to(k2, self.shape))

    @cached_property
    def omega(self) -> np.ndarray:
        """Dispersion relation sqrt(|k|^2 + 1); bounded below by 1."""
        return np.sqrt(self.k_abs ** 2 + 1.0)

    @cached_property
    def japanese_x(self) -> np.ndarray:
        return np.sqrt(1.0 + self.radius ** 2)

    @cached_property
    def _shift_phase(self) -> np.ndarray:
        # exp(i k L/2) per axis, relates lattice DFT to samples of the continuous transform
        ph = np.exp(0.5j * self.extent * self.axis_frequencies)
        out = np.ones(self.shape, dtype=complex)
        for a in _broadcast_axes(ph, self.dim):
            out = out * a
        return out

    @property
    def spectral_scale(self) -> float:
        return (self.spacing / np.sqrt(2.0 * np.pi)) ** self.dim

    def fft(self, values: np.ndarray) -> np.ndarray:
        """Raw lattice DFT (no normalization); pair with :meth:`ifft`."""
        return sfft.fftn(values, workers=self.workers)

    def ifft(self, values: np.ndarray) -> np.ndarray:
        return sfft.ifftn(values, workers=self.workers)

    def multiply_spectral(self, values: np.ndarray, multiplier) -> np.ndarray:
        """Apply a Fourier multiplier m(k) to physical samples."""
        return self.ifft(multiplier * self.fft(values))

    def zeros(self) -> np.ndarray:
        return np.zeros(self.shape, dtype=complex)


def _broadcast_axes(axis: np.ndarray, dim: int) -> tuple[np.ndarray, ...]:
    out = []
    for d in range(dim):
        shape = [1] * dim
        shape[d] = axis.size
        out.append(axis.reshape(shape))
    return tuple(out)


def make_grid(dim: int, extent: float, points_per_dim: int, workers: int = 1) -> Grid:
    if dim not in (1, 2, 3):
        raise GridError(f"dim must be 1, 2 or 3, got {dim}")
    if not extent > 0:
        raise GridError(f"extent must be positive, got {extent}")
    if int(points_per_dim) != points_per_dim or points_per_dim % 2 or points_per_dim < 8:
        raise GridError(f"points_per_dim must be an even integer >= 8, got {points_per_dim}")
    if points_per_dim ** dim > MAX_SITES:
        raise GridError(
            f"{points_per_dim}^{dim} sites exceeds the memory bound of {MAX_SITES}")
    return Grid(int(dim), float(extent), int(points_per_dim), int(workers))


@dataclass(frozen=True)
class Field:
    grid: Grid
    values: np.ndarray
    space: Space = "physical"

    def __post_init__(self):
        if self.values.shape != self.grid.shape:
            raise GridError(f"values shape {self.values.shape} != grid shape {self.grid.shape}")

    def with_values(self, values: np.ndarray) -> "Field":
        return Field(self.grid, values, self.space)

    def max_imag_ratio(self) -> float:
        """max |Im| / max |value|; the realness diagnostic for real dynamics."""
        peak = np.max(np.abs(self.values))
        if peak == 0:
            return 0.0
        return float(np.max(np.abs(self.values.imag)) / peak)


@dataclass(frozen=True)
class FieldState:
    """The pair (u, u_dot) on one grid, both in physical representation."""

    u: Field
    udot: Field

    def __post_init__(self):
        if self.u.grid != self.udot.grid:
            raise GridError("u and udot live on different grids")
        if self.u.space != "physical" or self.udot.space != "physical":
            raise RepresentationError("FieldState components must be physical")

    @classmethod
    def from_arrays(cls, grid: Grid, u, udot=None) -> "FieldState":
        u = np.asarray(u, dtype=complex)
        udot = np.zeros_like(u) if udot is None else np.asarray(udot, dtype=complex)
        return cls(Field(grid, np.broadcast_to(u, grid.shape).copy()),
                   Field(grid, np.broadcast_to(udot, grid.shape).copy()))

    @property
    def grid(self) -> Grid:
        return self.u.grid

    def __add__(self, other: "FieldState") -> "FieldState":
        return FieldState.from_arrays(self.grid, self.u.values + other.u.values,
                                      self.udot.values + other.udot.values)

    def __sub__(self, other: "FieldState") -> "FieldState":
        return FieldState.from_arrays(self.grid, self.u.values - other.u.values,
                                      self.udot.values - other.udot.values)

    def scaled(self, c: complex) -> "FieldState":
        return FieldState.from_arrays(self.grid, c * self.u.values, c * self.udot.values)


def spectral_transform(field: Field, direction: Literal["forward", "inverse"]) -> Field:
    grid = field.grid
    if direction == "forward":
        if field.space != "physical":
            raise RepresentationError("forward transform needs a physical field")
        coeffs = grid.spectral_scale * grid._shift_phase * grid.fft(field.values)
        return Field(grid, coeffs, "spectral")
    if direction == "inverse":
        if field.space != "spectral":
            raise RepresentationError("inverse transform needs a spectral field")
        values = grid.ifft(field.values / (grid.spectral_scale * grid._shift_phase))
        return Field(grid, values, "physical")
    raise ValueError(f"unknown direction {direction!r}")


@dataclass(frozen=True)
class NormSpec:
    kind: Literal["L2", "Linf", "L1", "H_sigma_delta", "S_norm"] = "L2"
    sigma: float = 0.0
    delta: float = 0.0


def _check_finite(values: np.ndarray) -> None:
    if not np.all(np.isfinite(values)):
        raise ValueError("field contains NaN or Inf")


def l2_norm(grid: Grid, values: np.ndarray) -> float:
    return float(np.sqrt(grid.cell_volume * np.vdot(values, values).real))


def spectral_l2_norm(field: Field) -> float:
    if field.space != "spectral":
        raise RepresentationError("expected a spectral field")
    return float(np.sqrt(field.grid.dk ** field.grid.dim * np.vdot(field.values, field.values).real))


def l1_norm(grid: Grid, values: np.ndarray) -> float:
    return float(grid.cell_volume * np.sum(np.abs(values)))


def inner(grid: Grid, f: np.ndarray, g: np.ndarray) -> complex:
    """Lattice L2 inner product, antilinear in the first slot."""
    return complex(grid.cell_volume * np.vdot(f, g))


def bessel_potential(grid: Grid, values: np.ndarray, sigma: float) -> np.ndarray:
    """<P>^sigma applied spectrally."""
    if sigma == 0:
        return values
    return grid.multiply_spectral(values, grid.omega ** sigma)


def h_norm(grid: Grid, values: np.ndarray, sigma: float = 0.0, delta: float = 0.0) -> float:
    """||<x>^delta <P>^sigma f||_L2."""
    w = bessel_potential(grid, values, sigma)
    if delta:
        w = grid.japanese_x ** delta * w
    return l2_norm(grid, w)


def s_norm(state: FieldState, delta: float = 0.0) -> float:
    g = state.grid
    return h_norm(g, state.u.values, 1.0, delta) + h_norm(g, state.udot.values, 0.0, delta)


def weighted_norm(obj: Union[Field, FieldState], spec: NormSpec = NormSpec()) -> float:
    if isinstance(obj, FieldState):
        _check_finite(obj.u.values)
        _check_finite(obj.udot.values)
        if spec.kind != "S_norm":
            raise ValueError("a FieldState only supports the S_norm kind")
        return s_norm(obj, spec.delta)
    if obj.space != "physical":
        raise RepresentationError("weighted_norm works on physical fields")
    g, v = obj.grid, obj.values
    _check_finite(v)
    if spec.kind == "L2":
        return l2_norm(g, v)
    if spec.kind == "Linf":
        return float(np.max(np.abs(v)))
    if spec.kind == "L1":
        return l1_norm(g, v)
    if spec.kind == "H_sigma_delta":
        return h_norm(g, v, spec.sigma, spec.delta)
    raise ValueError(f"norm kind {spec.kind!r} needs a FieldState")
