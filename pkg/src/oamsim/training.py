"""Trainable diffractive phase stacks: forward model, loss, analytic
gradients, Adam optimization, and the four-mode gate target library.

The stack alternates free-space hops of length ``spacing`` with phase-layer
modulations: input -> hop -> layer 1 -> hop -> ... -> layer L -> hop ->
output, so the total optical path is (L+1)*spacing.

Gradients are computed by reverse propagation of the output residual: the
adjoint field is carried backwards with the conjugated transfer function and
conjugated layer modulations, and each layer's phase gradient is
(2/n^2) * Im[conj(t * u) * adjoint], accumulated over training pairs. This
matches central finite differences of the loss to first order in h.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .optics import (
    Field,
    GridSpec,
    PhaseLayer,
    power,
    propagate_amplitudes,
    propagation_kernel,
)
from .modes import ModeBasis

STACK_MAGIC = b"OAMS"

GATE_TARGET_NAMES = ("toffoli-cnot", "cch", "fredkin-swap", "ccz")

_SQRT2 = np.sqrt(2.0)


def _target_matrix(name: str) -> np.ndarray:
    if name == "toffoli-cnot":
        # CNOT on (amplitude, sign): swaps the sign bit when |l| = 3
        return np.array(
            [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex
        )
    if name == "cch":
        # Hadamard on the sign bit when |l| = 3
        h = np.array([[1, 1], [1, -1]], dtype=complex) / _SQRT2
        out = np.eye(4, dtype=complex)
        out[2:, 2:] = h
        return out
    if name == "fredkin-swap":
        # swap of (a, s) = (0, 1) <-> (1, 0)
        return np.array(
            [[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]], dtype=complex
        )
    if name == "ccz":
        return np.diag([1.0, 1.0, 1.0, -1.0]).astype(complex)
    raise ValueError(f"unknown gate target {name!r}; known: {GATE_TARGET_NAMES}")


@dataclass(frozen=True)
class OamGateTarget:
    """Named 4x4 unitary on the encoded (amplitude, sign) subspace."""

    name: str
    unitary: np.ndarray

    def __post_init__(self) -> None:
        u = np.asarray(self.unitary, dtype=np.complex128)
        if u.shape != (4, 4):
            raise ValueError(f"gate target must be 4x4, got {u.shape}")
        defect = np.max(np.abs(u.conj().T @ u - np.eye(4)))
        if defect >= 1e-12:
            raise ValueError(f"gate target {self.name!r} not unitary (defect {defect:.3g})")
        object.__setattr__(self, "unitary", u)


def gate_target(name: str) -> OamGateTarget:
    return OamGateTarget(name, _target_matrix(name))


@dataclass(frozen=True, eq=False)
class PhaseStack:
    """Ordered phase layers with uniform plane spacing on one grid."""

    layers: tuple[PhaseLayer, ...]
    spacing: float
    grid: GridSpec

    def __post_init__(self) -> None:
        if self.spacing <= 0:
            raise ValueError(f"spacing must be positive, got {self.spacing}")
        for layer in self.layers:
            if layer.grid != self.grid:
                raise ValueError("all stack layers must share the stack grid")

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def total_path(self) -> float:
        return (self.n_layers + 1) * self.spacing

    def phase_array(self) -> np.ndarray:
        """Phases as an (L, n, n) array (empty stacks give shape (0, n, n))."""
        if not self.layers:
            return np.zeros((0, self.grid.n, self.grid.n))
        return np.stack([layer.phases for layer in self.layers])

    def with_phases(self, phases: np.ndarray) -> "PhaseStack":
        layers = tuple(PhaseLayer(self.grid, p) for p in phases)
        return PhaseStack(layers, self.spacing, self.grid)


def new_stack(
    grid: GridSpec,
    n_layers: int,
    spacing: float,
    seed: int | None = 0,
    init_span: float = 0.1,
) -> PhaseStack:
    """Fresh stack with seeded uniform phases in (-init_span, init_span) rad.

    ``seed=None`` gives all-zero layers.
    """
    if n_layers < 0:
        raise ValueError("n_layers must be >= 0")
    if seed is None:
        phases = np.zeros((n_layers, grid.n, grid.n))
    else:
        rng = np.random.default_rng(seed)
        phases = rng.uniform(-init_span, init_span, size=(n_layers, grid.n, grid.n))
    return PhaseStack(tuple(PhaseLayer(grid, p) for p in phases), spacing, grid)


@dataclass(frozen=True, eq=False)
class TrainingSet:
    """Input/target field pairs with per-pair positive weights."""

    pairs: tuple[tuple[Field, Field], ...]
    weights: np.ndarray

    def __post_init__(self) -> None:
        if not self.pairs:
            raise ValueError("training set must contain at least one pair")
        w = np.asarray(self.weights, dtype=np.float64)
        if w.shape != (len(self.pairs),):
            raise ValueError("one weight per pair required")
        if np.any(w <= 0):
            raise ValueError("pair weights must be positive")
        grid = self.pairs[0][0].grid
        for inp, tgt in self.pairs:
            if inp.grid != grid or tgt.grid != grid:
                raise ValueError("all training fields must share one grid")
            for f, role in ((inp, "input"), (tgt, "target")):
                if abs(power(f) - 1.0) > 1e-6:
                    raise ValueError(f"training {role} is not unit power")
        object.__setattr__(self, "weights", w)

    @property
    def grid(self) -> GridSpec:
        return self.pairs[0][0].grid

    def input_array(self) -> np.ndarray:
        return np.stack([inp.amplitudes for inp, _ in self.pairs])

    def target_array(self) -> np.ndarray:
        return np.stack([tgt.amplitudes for _, tgt in self.pairs])


def make_training_set(pairs, weights=None) -> TrainingSet:
    pairs = tuple((inp, tgt) for inp, tgt in pairs)
    if weights is None:
        weights = np.ones(len(pairs))
    return TrainingSet(pairs, np.asarray(weights, dtype=np.float64))


def build_gate_training_set(
    target: OamGateTarget,
    input_basis: ModeBasis,
    reference_basis: ModeBasis,
    include_superpositions: bool = True,
) -> TrainingSet:
    """Pairs mapping each basis mode j to sum_k U[k,j] * reference_k.

    With ``include_superpositions``, every unordered mode pair (j, k) adds the
    inputs (m_j + m_k)/sqrt(2) and (m_j + i*m_k)/sqrt(2) with targets obtained
    by applying the unitary linearly; these over-determine the inter-channel
    phases of the trained system.
    """
    if reference_basis.provenance != "propagated-reference":
        raise ValueError("reference basis must be the propagated input basis")
    grid = input_basis.grid
    ins = input_basis.stacked()
    refs = reference_basis.stacked()
    u = target.unitary
    mapped = np.einsum("kj,kab->jab", u, refs)  # mapped[j] = U applied to mode j

    pairs = [(Field(grid, ins[j]), Field(grid, mapped[j])) for j in range(4)]
    if include_superpositions:
        for j in range(4):
            for k in range(j + 1, 4):
                for c in (1.0, 1j):
                    pairs.append(
                        (
                            Field(grid, (ins[j] + c * ins[k]) / _SQRT2),
                            Field(grid, (mapped[j] + c * mapped[k]) / _SQRT2),
                        )
                    )
    return make_training_set(pairs)


def forward_amplitudes(stack: PhaseStack, amplitudes: np.ndarray) -> np.ndarray:
    """Batched forward pass over (..., n, n) amplitude stacks."""
    kernel = propagation_kernel(stack.grid, stack.spacing)
    out = propagate_amplitudes(amplitudes, kernel)
    for layer in stack.layers:
        out = propagate_amplitudes(out * np.exp(1j * layer.phases), kernel)
    return out


def forward(stack: PhaseStack, field: Field) -> Field:
    """Propagate through the stack: hop, modulate, ..., final hop."""
    if field.grid != stack.grid:
        raise ValueError(f"grid mismatch in forward: {field.grid} vs {stack.grid}")
    return Field(stack.grid, forward_amplitudes(stack, field.amplitudes))


def _residual_terms(out: np.ndarray, tgt: np.ndarray, variant: str):
    """Per-pair summed loss terms and the adjoint seed d(term)/d(conj(out))."""
    diff = out - tgt
    if variant == "mse":
        terms = np.sum(np.abs(diff) ** 2, axis=(-2, -1)).real
        return terms, diff
    if variant == "mae":
        mag = np.abs(diff)
        terms = np.sum(mag, axis=(-2, -1))
        seed = np.zeros_like(diff)
        nz = mag > 0
        seed[nz] = diff[nz] / (2.0 * mag[nz])
        return terms, seed
    raise ValueError(f"unknown loss variant {variant!r}; use 'mse' or 'mae'")


def loss(stack: PhaseStack, training_set: TrainingSet, variant: str = "mse") -> float:
    """Mean over pairs of weight * (1/n^2) * sum(|output - target|^2)."""
    if training_set.grid != stack.grid:
        raise ValueError("training set grid does not match stack grid")
    out = forward_amplitudes(stack, training_set.input_array())
    terms, _ = _residual_terms(out, training_set.target_array(), variant)
    n2 = stack.grid.n**2
    return float(np.mean(training_set.weights * terms) / n2)


def loss_and_gradient(
    stack: PhaseStack, training_set: TrainingSet, variant: str = "mse"
) -> tuple[float, np.ndarray]:
    """Loss and per-layer (L, n, n) phase gradients via the adjoint pass."""
    if training_set.grid != stack.grid:
        raise ValueError("training set grid does not match stack grid")
    grid = stack.grid
    kernel = propagation_kernel(grid, stack.spacing)
    modulations = [np.exp(1j * layer.phases) for layer in stack.layers]

    incident = []  # field arriving at each layer, per pair
    u = propagate_amplitudes(training_set.input_array(), kernel)
    for t in modulations:
        incident.append(u)
        # operand order matters for bit-exactness against forward()
        u = propagate_amplitudes(u * t, kernel)

    terms, seed = _residual_terms(u, training_set.target_array(), variant)
    n2 = grid.n**2
    total = float(np.mean(training_set.weights * terms) / n2)

    n_pairs = len(training_set.pairs)
    pair_scale = (training_set.weights / n_pairs)[:, None, None]
    grads = np.empty((stack.n_layers, grid.n, grid.n))
    adjoint = propagate_amplitudes(seed, np.conj(kernel))
    for idx in range(stack.n_layers - 1, -1, -1):
        t_u = incident[idx] * modulations[idx]
        grads[idx] = (2.0 / n2) * np.sum(
            pair_scale * np.imag(np.conj(t_u) * adjoint), axis=0
        )
        if idx > 0:
            adjoint = propagate_amplitudes(np.conj(modulations[idx]) * adjoint, np.conj(kernel))
    return total, grads


def adjoint_gradient(
    stack: PhaseStack, training_set: TrainingSet, variant: str = "mse"
) -> np.ndarray:
    """Per-layer phase gradients of :func:`loss`."""
    return loss_and_gradient(stack, training_set, variant)[1]


@dataclass
class TrainResult:
    stack: PhaseStack
    loss_history: np.ndarray


def train(
    stack: PhaseStack,
    training_set: TrainingSet,
    iterations: int,
    learning_rate: float = 0.01,
    variant: str = "mse",
    beta1: float = 0.9,
    beta2: float = 0.999,
    epsilon: float = 1e-8,
) -> TrainResult:
    """Adam on all layer phases jointly; returns trained stack + loss history.

    The loss recorded at index i is evaluated before update i, so
    ``loss_history[0]`` is the starting loss. Aborts on non-finite loss.
    """
    if iterations < 1:
        raise ValueError(f"iterations must be >= 1, got {iterations}")
    if stack.n_layers == 0:
        raise ValueError("cannot train an empty stack")
    phases = stack.phase_array()
    m = np.zeros_like(phases)
    v = np.zeros_like(phases)
    history = np.empty(iterations)
    current = stack
    for it in range(1, iterations + 1):
        value, grad = loss_and_gradient(current, training_set, variant)
        if not np.isfinite(value):
            raise FloatingPointError(f"training diverged at iteration {it}: loss={value}")
        history[it - 1] = value
        m = beta1 * m + (1.0 - beta1) * grad
        v = beta2 * v + (1.0 - beta2) * grad * grad
        m_hat = m / (1.0 - beta1**it)
        v_hat = v / (1.0 - beta2**it)
        phases = phases - learning_rate * m_hat / (np.sqrt(v_hat) + epsilon)
        current = current.with_phases(phases)
    return TrainResult(stack=current, loss_history=history)


def save_stack(stack: PhaseStack, path) -> None:
    """Write the binary stack format (magic, L, n, pitch, wavelength, spacing, phases)."""
    header = STACK_MAGIC + struct.pack(
        "<IIddd",
        stack.n_layers,
        stack.grid.n,
        stack.grid.pitch,
        stack.grid.wavelength,
        stack.spacing,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(stack.phase_array().astype("<f8").tobytes())


def load_stack(path) -> PhaseStack:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != STACK_MAGIC:
        raise ValueError(f"{path}: bad magic {blob[:4]!r}, expected {STACK_MAGIC!r}")
    n_layers, n, pitch, wavelength, spacing = struct.unpack_from("<IIddd", blob, 4)
    offset = 4 + struct.calcsize("<IIddd")
    expected = offset + n_layers * n * n * 8
    if len(blob) != expected:
        raise ValueError(f"{path}: truncated stack file ({len(blob)} of {expected} bytes)")
    phases = np.frombuffer(blob, dtype="<f8", offset=offset).reshape(n_layers, n, n)
    grid = GridSpec(n=n, pitch=pitch, wavelength=wavelength)
    return PhaseStack(
        tuple(PhaseLayer(grid, p) for p in phases), spacing, grid
    )
