import numpy as np
import pytest

from oamsim.modes import (
    ENCODING_CHARGES,
    OamSpec,
    make_input_basis,
    make_oam_mode,
    make_reference_basis,
    max_waist,
    project_onto_basis,
)
from oamsim.optics import Field, asm_propagate, inner_product, power

from conftest import small_grid

GRID = small_grid(n=128, pitch=20e-6)
WAIST = 1.4e-4


def test_l0_is_real_positive_gaussian():
    mode = make_oam_mode(OamSpec(0, WAIST), GRID)
    assert np.max(np.abs(mode.amplitudes.imag)) == 0
    assert np.all(mode.amplitudes.real >= 0)
    assert abs(power(mode) - 1.0) < 1e-9


def test_topological_charge_winding():
    # accumulated phase along a centered circle is 2*pi*l
    mode = make_oam_mode(OamSpec(3, WAIST), GRID)
    radius_px = int(round(WAIST * np.sqrt(1.5) / GRID.pitch))
    angles = np.linspace(0, 2 * np.pi, 720, endpoint=False)
    ii = (GRID.n // 2 + radius_px * np.cos(angles)).astype(int)
    jj = (GRID.n // 2 + radius_px * np.sin(angles)).astype(int)
    phases = np.angle(mode.amplitudes[ii, jj])
    winding = np.sum(np.mod(np.diff(np.concatenate([phases, phases[:1]])) + np.pi, 2 * np.pi) - np.pi)
    assert abs(winding - 6 * np.pi) < 1e-6


def test_opposite_charges_are_orthogonal():
    plus = make_oam_mode(OamSpec(1, WAIST), GRID)
    minus = make_oam_mode(OamSpec(-1, WAIST), GRID)
    assert abs(inner_product(plus, minus)) < 1e-8


def test_aperture_guard_suggests_waist():
    with pytest.raises(ValueError) as err:
        make_oam_mode(OamSpec(3, 1.0e-3), GRID)
    assert f"{max_waist(GRID, 3):.4g}" in str(err.value)


def test_unit_power_within_tolerance():
    for l in ENCODING_CHARGES:
        w = WAIST if abs(l) == 1 else 3.0e-4
        assert abs(power(make_oam_mode(OamSpec(l, w), GRID)) - 1.0) < 1e-9


class TestReferenceBasis:
    def test_zero_path_preserves_basis(self):
        basis = make_input_basis(GRID, WAIST, 3.0e-4)
        refs = make_reference_basis(basis, 0.0)
        for mode, ref in zip(basis.modes, refs.modes):
            assert np.max(np.abs(mode.amplitudes - ref.amplitudes)) < 1e-9

    def test_propagated_references_stay_orthonormal(self):
        basis = make_input_basis(GRID, WAIST, 3.0e-4)
        refs = make_reference_basis(basis, 0.05)
        gram = refs.gram()
        assert np.max(np.abs(gram - np.diag(np.diag(gram)))) < 1e-6
        assert refs.provenance == "propagated-reference"

    def test_propagated_input_projects_onto_its_reference(self):
        basis = make_input_basis(GRID, WAIST, 3.0e-4)
        refs = make_reference_basis(basis, 0.05)
        out = asm_propagate(basis.modes[3], 0.05)
        comps = project_onto_basis(out, refs)
        assert np.max(np.abs(comps - np.array([0, 0, 0, 1.0]))) < 1e-6


class TestProjection:
    def setup_method(self):
        self.basis = make_input_basis(GRID, WAIST, 3.0e-4)

    def test_basis_mode_projects_to_unit_vector(self):
        comps = project_onto_basis(self.basis.modes[2], self.basis)
        assert np.max(np.abs(comps - np.array([0, 0, 1.0, 0]))) < 1e-6

    def test_superposition_projects_linearly(self):
        m0, m3 = self.basis.modes[0], self.basis.modes[3]
        combo = Field(GRID, (m0.amplitudes + m3.amplitudes) / np.sqrt(2))
        comps = project_onto_basis(combo, self.basis)
        expected = np.array([1 / np.sqrt(2), 0, 0, 1 / np.sqrt(2)])
        assert np.max(np.abs(comps - expected)) < 1e-6

    def test_zero_field_projects_to_zero(self):
        zero = Field(GRID, np.zeros((GRID.n, GRID.n), dtype=complex))
        assert np.all(project_onto_basis(zero, self.basis) == 0)

    def test_linearity_on_random_superpositions(self):
        rng = np.random.default_rng(42)
        stacked = self.basis.stacked()
        for _ in range(5):
            coeff = rng.normal(size=4) + 1j * rng.normal(size=4)
            coeff /= np.linalg.norm(coeff)
            combo = Field(GRID, np.einsum("k,kab->ab", coeff, stacked))
            comps = project_onto_basis(combo, self.basis)
            assert np.max(np.abs(comps - coeff)) < 1e-10

    def test_power_captured_by_unit_superposition(self):
        rng = np.random.default_rng(43)
        coeff = rng.normal(size=4) + 1j * rng.normal(size=4)
        coeff /= np.linalg.norm(coeff)
        combo = Field(GRID, np.einsum("k,kab->ab", coeff, self.basis.stacked()))
        comps = project_onto_basis(combo, self.basis)
        assert abs(np.sum(np.abs(comps) ** 2) - 1.0) < 1e-6


def test_captured_power_of_basis_member():
    from oamsim.modes import captured_power

    basis = make_input_basis(GRID, WAIST, 3.0e-4)
    assert captured_power(basis.modes[1], basis) == pytest.approx(1.0, abs=1e-6)
