"""Scalar optical fields on sampled grids and angular-spectrum propagation.

Conventions used throughout the package:

* Grids are square, ``n`` pixels per side with physical pixel ``pitch`` in
  meters. Coordinates are centered: index ``i`` maps to ``(i - n/2) * pitch``.
* The forward Fourier transform uses the ``exp(-2*pi*i*f*x)`` kernel with no
  prefactor; the inverse carries the ``1/n**2`` normalization (numpy/scipy
  default). Serialized spectra are reproducible bit-for-bit for a fixed
  FFT backend.
* ``power(field) = sum(|amplitude|**2) * pitch**2``; all inner products carry
  the same ``pitch**2`` measure, so unit-power fields have unit norm.
* Propagation multiplies the spectrum by
  ``H = exp(2i*pi/lambda * dz * sqrt(1 - (lambda*fx)**2 - (lambda*fy)**2))``,
  zeroes evanescent components, and applies the per-axis anti-aliasing limit
  ``f_max = 1 / (lambda * sqrt((2*dz/(n*pitch))**2 + 1))``.
"""

from __future__ import annotations

import functools
import struct
from dataclasses import dataclass

import numpy as np
import scipy.fft as _fft

_FFT_WORKERS = 1

FIELD_MAGIC = b"OAMF"


def set_fft_workers(workers: int) -> None:
    """Set the worker count used by the FFT backend (1 = serial)."""
    global _FFT_WORKERS
    if workers < 1:
        raise ValueError(f"fft workers must be >= 1, got {workers}")
    _FFT_WORKERS = int(workers)


def _fft2(a: np.ndarray) -> np.ndarray:
    return _fft.fft2(a, axes=(-2, -1), workers=_FFT_WORKERS)


def _ifft2(a: np.ndarray) -> np.ndarray:
    return _fft.ifft2(a, axes=(-2, -1), workers=_FFT_WORKERS)


@dataclass(frozen=True)
class GridSpec:
    """Square sampling grid: pixels per side, pixel pitch and wavelength (m)."""

    n: int
    pitch: float
    wavelength: float

    def __post_init__(self) -> None:
        if self.n < 16 or (self.n & (self.n - 1)) != 0:
            raise ValueError(f"grid n must be a power of two >= 16, got {self.n}")
        if self.pitch <= 0:
            raise ValueError(f"grid pitch must be positive, got {self.pitch}")
        if self.wavelength <= 0:
            raise ValueError(f"wavelength must be positive, got {self.wavelength}")

    @property
    def extent(self) -> float:
        """Physical side length of the grid in meters."""
        return self.n * self.pitch

    def coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        """Centered (x, y) coordinate arrays in meters, ij-indexed."""
        return _coordinates(self)

    def frequencies(self) -> tuple[np.ndarray, np.ndarray]:
        """Spatial-frequency arrays (fx, fy) in cycles/m, FFT layout."""
        return _frequencies(self)


@functools.lru_cache(maxsize=32)
def _coordinates(grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    c = (np.arange(grid.n) - grid.n / 2) * grid.pitch
    x, y = np.meshgrid(c, c, indexing="ij")
    x.flags.writeable = False
    y.flags.writeable = False
    return x, y


@functools.lru_cache(maxsize=32)
def _frequencies(grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    f = np.fft.fftfreq(grid.n, d=grid.pitch)
    fx, fy = np.meshgrid(f, f, indexing="ij")
    fx.flags.writeable = False
    fy.flags.writeable = False
    return fx, fy


@dataclass(frozen=True, eq=False)
class Field:
    """Complex scalar field sampled on a grid. Treated as an immutable value."""

    grid: GridSpec
    amplitudes: np.ndarray

    def __post_init__(self) -> None:
        a = np.asarray(self.amplitudes, dtype=np.complex128)
        if a.shape != (self.grid.n, self.grid.n):
            raise ValueError(
                f"amplitudes shape {a.shape} does not match grid n={self.grid.n}"
            )
        object.__setattr__(self, "amplitudes", a)


@dataclass(frozen=True, eq=False)
class PhaseLayer:
    """Real phase samples in radians; the applied modulation is exp(i*phase)."""

    grid: GridSpec
    phases: np.ndarray

    def __post_init__(self) -> None:
        p = np.asarray(self.phases, dtype=np.float64)
        if p.shape != (self.grid.n, self.grid.n):
            raise ValueError(
                f"phases shape {p.shape} does not match grid n={self.grid.n}"
            )
        if not np.all(np.isfinite(p)):
            raise ValueError("phase layer contains non-finite values")
        object.__setattr__(self, "phases", p)


def _require_same_grid(a: GridSpec, b: GridSpec, what: str) -> None:
    if a != b:
        raise ValueError(f"grid mismatch in {what}: {a} vs {b}")


def power(field: Field) -> float:
    """Total power sum(|amplitude|**2) * pitch**2."""
    return float(np.sum(np.abs(field.amplitudes) ** 2) * field.grid.pitch**2)


def normalize(field: Field) -> Field:
    """Rescale to unit power. Rejects zero fields."""
    p = power(field)
    if p <= 0.0:
        raise ValueError("cannot normalize a zero-power field")
    return Field(field.grid, field.amplitudes / np.sqrt(p))


def inner_product(a: Field, b: Field) -> complex:
    """<a|b> = sum(conj(a) * b) * pitch**2; conjugate-linear in ``a``."""
    _require_same_grid(a.grid, b.grid, "inner_product")
    return complex(np.sum(np.conj(a.amplitudes) * b.amplitudes) * a.grid.pitch**2)


@functools.lru_cache(maxsize=128)
def propagation_kernel(grid: GridSpec, distance: float) -> np.ndarray:
    """Spectral transfer function for one free-space hop, band-limit applied.

    Evanescent components (where (lambda*f)**2 > 1) carry no power over any
    positive distance and are zeroed. The per-axis frequency limit suppresses
    wrap-around aliasing of the circular convolution.
    """
    if distance < 0:
        raise ValueError(f"propagation distance must be >= 0, got {distance}")
    fx, fy = grid.frequencies()
    lam = grid.wavelength
    arg = 1.0 - (lam * fx) ** 2 - (lam * fy) ** 2
    kernel = np.zeros((grid.n, grid.n), dtype=np.complex128)
    propagating = arg > 0.0
    kernel[propagating] = np.exp(
        (2j * np.pi / lam) * distance * np.sqrt(arg[propagating])
    )
    f_max = 1.0 / (lam * np.sqrt((2.0 * distance / grid.extent) ** 2 + 1.0))
    kernel *= (np.abs(fx) <= f_max) & (np.abs(fy) <= f_max)
    kernel.flags.writeable = False
    return kernel


def propagate_amplitudes(amplitudes: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Apply one spectral propagation step to an (..., n, n) batch."""
    return _ifft2(_fft2(amplitudes) * kernel)


def asm_propagate(field: Field, distance: float) -> Field:
    """Free-space propagation by ``distance`` meters (>= 0)."""
    kernel = propagation_kernel(field.grid, distance)
    return Field(field.grid, propagate_amplitudes(field.amplitudes, kernel))


def apply_phase_layer(field: Field, layer: PhaseLayer) -> Field:
    """Pointwise multiply by exp(i*phase); preserves power exactly."""
    _require_same_grid(field.grid, layer.grid, "apply_phase_layer")
    return Field(field.grid, field.amplitudes * np.exp(1j * layer.phases))


def save_field(field: Field, path) -> None:
    """Write the flat binary snapshot (magic, n, pitch, wavelength, re/im)."""
    header = FIELD_MAGIC + struct.pack(
        "<Idd", field.grid.n, field.grid.pitch, field.grid.wavelength
    )
    body = np.empty((field.grid.n, field.grid.n, 2), dtype="<f8")
    body[..., 0] = field.amplitudes.real
    body[..., 1] = field.amplitudes.imag
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(body.tobytes())


def load_field(path) -> Field:
    """Read a field snapshot written by :func:`save_field`."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != FIELD_MAGIC:
        raise ValueError(f"{path}: bad magic {blob[:4]!r}, expected {FIELD_MAGIC!r}")
    n, pitch, wavelength = struct.unpack_from("<Idd", blob, 4)
    offset = 4 + struct.calcsize("<Idd")
    expected = offset + n * n * 2 * 8
    if len(blob) != expected:
        raise ValueError(f"{path}: truncated field snapshot ({len(blob)} of {expected} bytes)")
    body = np.frombuffer(blob, dtype="<f8", offset=offset).reshape(n, n, 2)
    grid = GridSpec(n=n, pitch=pitch, wavelength=wavelength)
    return Field(grid, body[..., 0] + 1j * body[..., 1])
