"""Ring-Gaussian vortex modes, encoding bases, and mode-space projections.

The four-mode encoding basis is ordered by topological charge
(-1, +1, -3, +3), i.e. (amplitude bit, sign bit) = (00, 01, 10, 11).
Output projections use the free-space-propagated input basis as reference, so
an empty system reads out as the identity matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .optics import Field, GridSpec, asm_propagate, inner_product, normalize, power

ENCODING_CHARGES = (-1, +1, -3, +3)

MAX_CHARGE = 16


@dataclass(frozen=True)
class OamSpec:
    """Topological charge and 1/e amplitude waist (m) of a vortex mode."""

    l: int
    waist: float

    def __post_init__(self) -> None:
        if abs(self.l) > MAX_CHARGE:
            raise ValueError(f"|l| <= {MAX_CHARGE} required, got l={self.l}")
        if self.waist <= 0:
            raise ValueError(f"waist must be positive, got {self.waist}")


def default_waists(grid: GridSpec) -> tuple[float, float]:
    """Default waists for the |l|=1 and |l|=3 families, scaled to the grid.

    The two families get distinct waists so their bright rings stay radially
    disjoint; a shared waist leaves them overlapping, which caps how cleanly
    a few-layer phase stack can address one family without disturbing the
    other. The large-family value sits just inside the aperture guard.
    """
    return 0.055 * grid.extent, 0.117 * grid.extent


def max_waist(grid: GridSpec, l: int) -> float:
    """Largest waist passing the aperture guard for charge ``l``."""
    return grid.extent / (3.0 * (1.0 + np.sqrt(abs(l))))


def make_oam_mode(spec: OamSpec, grid: GridSpec) -> Field:
    """Normalized single-ring mode (r/w)^|l| exp(-r^2/w^2) exp(i*l*phi).

    The aperture guard waist*(1+sqrt(|l|)) < extent/3 keeps the ring and its
    diffraction tail clear of the window edge.
    """
    if spec.waist * (1.0 + np.sqrt(abs(spec.l))) >= grid.extent / 3.0:
        raise ValueError(
            f"mode l={spec.l} waist={spec.waist:g} m does not fit the grid; "
            f"largest allowed waist is {max_waist(grid, spec.l):.4g} m"
        )
    x, y = grid.coordinates()
    r = np.hypot(x, y)
    phi = np.arctan2(y, x)
    amp = (r / spec.waist) ** abs(spec.l) * np.exp(-((r / spec.waist) ** 2))
    if spec.l != 0:
        amp = amp * np.exp(1j * spec.l * phi)
    return normalize(Field(grid, amp.astype(np.complex128)))


@dataclass(frozen=True)
class ModeBasis:
    """Four orthonormal modes in encoding order plus their provenance."""

    modes: tuple[Field, ...]
    provenance: str = "input-plane"
    charges: tuple[int, ...] = field(default=ENCODING_CHARGES)

    def __post_init__(self) -> None:
        if len(self.modes) != 4:
            raise ValueError(f"encoding basis needs 4 modes, got {len(self.modes)}")
        grid = self.modes[0].grid
        for m in self.modes[1:]:
            if m.grid != grid:
                raise ValueError("all basis modes must share one grid")

    @property
    def grid(self) -> GridSpec:
        return self.modes[0].grid

    def stacked(self) -> np.ndarray:
        """Amplitudes as a (4, n, n) array."""
        return np.stack([m.amplitudes for m in self.modes])

    def gram(self) -> np.ndarray:
        """4x4 matrix of pairwise inner products."""
        g = np.empty((4, 4), dtype=np.complex128)
        for i, a in enumerate(self.modes):
            for j, b in enumerate(self.modes):
                g[i, j] = inner_product(a, b)
        return g

    def check_orthonormal(self, offdiag_tol: float = 1e-6, norm_tol: float = 1e-9) -> None:
        g = self.gram()
        offdiag = np.abs(g - np.diag(np.diag(g)))
        if offdiag.max() >= offdiag_tol:
            raise ValueError(f"basis modes not orthogonal: max overlap {offdiag.max():.3g}")
        if np.abs(np.diag(g).real - 1.0).max() >= norm_tol:
            raise ValueError("basis modes not unit power")


def make_input_basis(
    grid: GridSpec,
    waist_small: float | None = None,
    waist_large: float | None = None,
) -> ModeBasis:
    """Encoding basis at the input plane with per-family waists."""
    d_small, d_large = default_waists(grid)
    w_small = d_small if waist_small is None else waist_small
    w_large = d_large if waist_large is None else waist_large
    modes = tuple(
        make_oam_mode(OamSpec(l, w_small if abs(l) == 1 else w_large), grid)
        for l in ENCODING_CHARGES
    )
    basis = ModeBasis(modes, provenance="input-plane")
    basis.check_orthonormal()
    return basis


def make_reference_basis(input_basis: ModeBasis, total_path: float) -> ModeBasis:
    """Free-space propagate each input mode and renormalize.

    Projections against this basis make the unmodulated path read out as
    identity by construction.
    """
    refs = tuple(
        normalize(asm_propagate(m, total_path)) for m in input_basis.modes
    )
    basis = ModeBasis(refs, provenance="propagated-reference", charges=input_basis.charges)
    basis.check_orthonormal()
    return basis


def project_onto_basis(field: Field, basis: ModeBasis) -> np.ndarray:
    """Complex amplitude of ``field`` on each basis mode; no normalization."""
    if field.grid != basis.grid:
        raise ValueError(f"grid mismatch in projection: {field.grid} vs {basis.grid}")
    return np.array([inner_product(m, field) for m in basis.modes])


def captured_power(field: Field, basis: ModeBasis) -> float:
    """Fraction of the field's power landing in the basis span."""
    comps = project_onto_basis(field, basis)
    return float(np.sum(np.abs(comps) ** 2) / power(field))
