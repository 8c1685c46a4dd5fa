"""Three-qubit encoding (polarization, |l|, sign l), polarization-controlled
gate composition, truth tables, probe/entangled-state evolution, and count
sampling.

Computational basis order is |p a s> = |000> ... |111> with p the
polarization bit (V=0, H=1), a the OAM amplitude bit (|l|=1 -> 0, |l|=3 -> 1)
and s the sign bit (l<0 -> 0, l>0 -> 1). The horizontally polarized half of
the state passes through the phase stack; the vertical half bypasses it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .modes import ENCODING_CHARGES, ModeBasis, OamSpec
from .training import PhaseStack, forward_amplitudes, gate_target

DEFAULT_WAISTS = (1.4e-4, 3.0e-4)

_SQRT2 = np.sqrt(2.0)

ACCEPT_DEFECT = 0.05


def encode_label(
    p: int, a: int, s: int, waists: tuple[float, float] = DEFAULT_WAISTS
) -> tuple[str, OamSpec]:
    """Map computational bits to (polarization, vortex mode)."""
    for name, bit in (("p", p), ("a", a), ("s", s)):
        if bit not in (0, 1):
            raise ValueError(f"bit {name} must be 0 or 1, got {bit}")
    charge = ENCODING_CHARGES[2 * a + s]
    return ("V" if p == 0 else "H", OamSpec(charge, waists[a]))


def decode_label(polarization: str, l: int) -> tuple[int, int, int]:
    """Inverse of :func:`encode_label` (waist ignored)."""
    if polarization not in ("V", "H"):
        raise ValueError(f"polarization must be 'V' or 'H', got {polarization!r}")
    if l not in ENCODING_CHARGES:
        raise ValueError(f"charge {l} is not in the encoding {ENCODING_CHARGES}")
    idx = ENCODING_CHARGES.index(l)
    return (0 if polarization == "V" else 1, idx // 2, idx % 2)


@dataclass(frozen=True)
class TransferMatrix:
    """4x4 map from the input OAM basis to the reference basis."""

    entries: np.ndarray
    path_label: str

    def __post_init__(self) -> None:
        e = np.asarray(self.entries, dtype=np.complex128)
        if e.shape != (4, 4):
            raise ValueError(f"transfer matrix must be 4x4, got {e.shape}")
        if self.path_label not in ("H", "V"):
            raise ValueError(f"path label must be 'H' or 'V', got {self.path_label!r}")
        object.__setattr__(self, "entries", e)

    @property
    def unitarity_defect(self) -> float:
        e = self.entries
        return float(np.max(np.abs(e.conj().T @ e - np.eye(4))))


def _remove_global_phase(matrix: np.ndarray) -> np.ndarray:
    """Rotate so the largest-magnitude entry of column 0 is real positive."""
    pivot = matrix[np.argmax(np.abs(matrix[:, 0])), 0]
    if abs(pivot) == 0:
        return matrix
    return matrix * (np.conj(pivot) / np.abs(pivot))


def extract_transfer_matrix(
    stack: PhaseStack,
    input_basis: ModeBasis,
    reference_basis: ModeBasis,
    path_label: str = "H",
) -> TransferMatrix:
    """Column j = reference-basis projections of the propagated mode j."""
    out = forward_amplitudes(stack, input_basis.stacked())
    refs = reference_basis.stacked()
    pitch2 = stack.grid.pitch**2
    entries = np.einsum("kab,jab->kj", refs.conj(), out) * pitch2
    return TransferMatrix(_remove_global_phase(entries), path_label)


def identity_transfer_matrix(path_label: str) -> TransferMatrix:
    return TransferMatrix(np.eye(4, dtype=complex), path_label)


def ideal_oam_transfer_matrix(target_name: str, path_label: str = "H") -> TransferMatrix:
    return TransferMatrix(gate_target(target_name).unitary, path_label)


@dataclass(frozen=True)
class GateOperator:
    """8x8 operator |0><0|_p (x) T_V + |1><1|_p (x) T_H."""

    matrix: np.ndarray

    def __post_init__(self) -> None:
        m = np.asarray(self.matrix, dtype=np.complex128)
        if m.shape != (8, 8):
            raise ValueError(f"gate operator must be 8x8, got {m.shape}")
        object.__setattr__(self, "matrix", m)

    @property
    def unitarity_defect(self) -> float:
        m = self.matrix
        return float(np.max(np.abs(m.conj().T @ m - np.eye(8))))

    @property
    def accepted(self) -> bool:
        return self.unitarity_defect < ACCEPT_DEFECT


def compose_gate(t_h: TransferMatrix, t_v: TransferMatrix) -> GateOperator:
    """Block-diagonal polarization-controlled composition of the two paths."""
    if t_h.path_label != "H" or t_v.path_label != "V":
        raise ValueError(
            f"compose_gate needs (H, V) transfer matrices, got "
            f"({t_h.path_label!r}, {t_v.path_label!r})"
        )
    m = np.zeros((8, 8), dtype=np.complex128)
    m[:4, :4] = t_v.entries
    m[4:, 4:] = t_h.entries
    return GateOperator(m)


def ideal_gate(target_name: str) -> GateOperator:
    """Exact 8x8 gate for a named target (identity on the V path)."""
    return compose_gate(
        ideal_oam_transfer_matrix(target_name, "H"), identity_transfer_matrix("V")
    )


@dataclass(frozen=True)
class EncodedState:
    """Normalized 8-amplitude state; ``captured`` is the power fraction kept
    by the most recent renormalization (1.0 for unitary evolution)."""

    amplitudes: np.ndarray
    captured: float = 1.0

    def __post_init__(self) -> None:
        a = np.asarray(self.amplitudes, dtype=np.complex128)
        if a.shape != (8,):
            raise ValueError(f"encoded state needs 8 amplitudes, got shape {a.shape}")
        norm = np.linalg.norm(a)
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"encoded state not normalized: |psi| = {norm}")
        object.__setattr__(self, "amplitudes", a)

    def density_matrix(self) -> np.ndarray:
        return np.outer(self.amplitudes, self.amplitudes.conj())


def make_state(amplitudes) -> EncodedState:
    """Normalize arbitrary amplitudes into an :class:`EncodedState`."""
    a = np.asarray(amplitudes, dtype=np.complex128)
    norm = np.linalg.norm(a)
    if norm == 0:
        raise ValueError("cannot normalize the zero state")
    return EncodedState(a / norm)


def basis_state(index: int) -> EncodedState:
    a = np.zeros(8, dtype=np.complex128)
    a[index] = 1.0
    return EncodedState(a)


def apply_gate(gate: GateOperator, state: EncodedState) -> EncodedState:
    """Matrix-vector product; renormalizes when the gate leaks power and
    reports the kept fraction via ``captured``."""
    out = gate.matrix @ state.amplitudes
    norm_sq = float(np.sum(np.abs(out) ** 2))
    if norm_sq == 0:
        raise ValueError("gate annihilated the state")
    return EncodedState(out / np.sqrt(norm_sq), captured=norm_sq)


@dataclass(frozen=True)
class TruthTable:
    """Row j = renormalized detection probabilities for computational input j."""

    probs: np.ndarray
    expected: tuple[int, ...]
    visibility: float
    captured: np.ndarray = field(default=None)

    def __post_init__(self) -> None:
        p = np.asarray(self.probs, dtype=np.float64)
        if p.shape != (8, 8):
            raise ValueError(f"truth table must be 8x8, got {p.shape}")
        if np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("truth table rows must sum to 1")
        object.__setattr__(self, "probs", p)


def truth_table(gate: GateOperator, expected=None) -> TruthTable:
    """Detection probabilities |<k|G|j>|^2 with per-row renormalization.

    ``expected`` maps each input to its correct output index; by default it is
    the most probable output of each row.
    """
    raw = np.abs(gate.matrix.T) ** 2  # raw[j, k] = |<k|G|j>|^2
    captured = raw.sum(axis=1)
    if np.any(captured == 0):
        raise ValueError("gate maps a computational state to zero")
    probs = raw / captured[:, None]
    if expected is None:
        expected = tuple(int(k) for k in np.argmax(probs, axis=1))
    else:
        expected = tuple(int(k) for k in expected)
        if len(expected) != 8:
            raise ValueError("expected must list one output per input")
    visibility = float(np.mean(probs[np.arange(8), expected]))
    return TruthTable(probs=probs, expected=expected, visibility=visibility, captured=captured)


def expected_outputs(target_name: str) -> tuple[int, ...]:
    """Most-likely output per computational input under the ideal gate."""
    return truth_table(ideal_gate(target_name)).expected


def _ket(bits: str) -> np.ndarray:
    a = np.zeros(8, dtype=np.complex128)
    a[int(bits, 2)] = 1.0
    return a


def _single(token: str) -> np.ndarray:
    table = {
        "0": np.array([1.0, 0.0], dtype=complex),
        "1": np.array([0.0, 1.0], dtype=complex),
        "+": np.array([1.0, 1.0], dtype=complex) / _SQRT2,
        "-": np.array([1.0, -1.0], dtype=complex) / _SQRT2,
        "+i": np.array([1.0, 1j], dtype=complex) / _SQRT2,
        "-i": np.array([1.0, -1j], dtype=complex) / _SQRT2,
    }
    return table[token]


def product_state(*tokens: str) -> EncodedState:
    """Three-qubit product state from single-qubit tokens (0 1 + - +i -i)."""
    if len(tokens) != 3:
        raise ValueError("need exactly three single-qubit tokens")
    amps = np.kron(_single(tokens[0]), np.kron(_single(tokens[1]), _single(tokens[2])))
    return make_state(amps)


def probe_suite() -> list[tuple[str, EncodedState, EncodedState]]:
    """(label, input, ideal output) triples of the graded probe states.

    Ideal outputs are computed by applying the exact gate; each probe adds one
    more qubit in superposition.
    """
    toffoli = ideal_gate("toffoli-cnot")
    probes = [
        ("|1 1 -i>", product_state("1", "1", "-i")),
        ("|+ 1 +i>", product_state("+", "1", "+i")),
        ("|+i +i +>", product_state("+i", "+i", "+")),
    ]
    return [(label, state, apply_gate(toffoli, state)) for label, state in probes]


def alternate_probe() -> tuple[str, EncodedState, EncodedState]:
    """The |+ 0 +i> variant probe (invariant under the controlled flip)."""
    state = product_state("+", "0", "+i")
    return ("|+ 0 +i>", state, apply_gate(ideal_gate("toffoli-cnot"), state))


def entangled_suite_states() -> list[tuple[str, EncodedState, EncodedState]]:
    """Entangled (input, expected output) pairs over the OAM qubits."""
    c_values = (1.0, -1.0, 1j, -1j)
    suite = []
    idx = 1
    for c in c_values:
        psi = make_state(_ket("100") + c * _ket("111"))
        phi = make_state(_ket("100") + c * _ket("110"))
        suite.append((f"psi{idx}", psi, phi))
        idx += 1
    for c in c_values:
        psi = make_state(_ket("101") + c * _ket("110"))
        phi = make_state(_ket("101") + c * _ket("111"))
        suite.append((f"psi{idx}", psi, phi))
        idx += 1
    return suite


def evolve_entangled_suite(gate: GateOperator) -> list[tuple[str, np.ndarray, float]]:
    """Evolve the entangled-input suite; fidelity is against the ideal output.

    Requires an accepted gate (unitarity defect below ACCEPT_DEFECT).
    """
    if not gate.accepted:
        raise ValueError(
            f"gate not accepted: unitarity defect {gate.unitarity_defect:.4f} "
            f">= {ACCEPT_DEFECT}"
        )
    results = []
    for label, psi, phi in entangled_suite_states():
        out = apply_gate(gate, psi)
        rho = out.density_matrix()
        fid = float(np.real(phi.amplitudes.conj() @ rho @ phi.amplitudes))
        results.append((label, rho, fid))
    return results


def sample_counts(probabilities, mean_total: float, seed: int) -> np.ndarray:
    """Independent Poisson draws with means mean_total * p, seeded."""
    p = np.asarray(probabilities, dtype=np.float64)
    if np.any(p < 0):
        raise ValueError("probabilities must be non-negative")
    if mean_total <= 0:
        raise ValueError(f"mean_total must be positive, got {mean_total}")
    rng = np.random.default_rng(seed)
    return rng.poisson(mean_total * p)
