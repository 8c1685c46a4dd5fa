"""Simulator and characterization toolkit for polarization+OAM encoded
three-qubit photonic gates built from trainable diffractive phase stacks."""

from .optics import (
    Field,
    GridSpec,
    PhaseLayer,
    apply_phase_layer,
    asm_propagate,
    inner_product,
    load_field,
    power,
    save_field,
    set_fft_workers,
)
from .modes import (
    ENCODING_CHARGES,
    ModeBasis,
    OamSpec,
    make_input_basis,
    make_oam_mode,
    make_reference_basis,
    project_onto_basis,
)
from .training import (
    GATE_TARGET_NAMES,
    OamGateTarget,
    PhaseStack,
    TrainingSet,
    adjoint_gradient,
    build_gate_training_set,
    forward,
    gate_target,
    load_stack,
    loss,
    make_training_set,
    new_stack,
    save_stack,
    train,
)
from .gate import (
    EncodedState,
    GateOperator,
    TransferMatrix,
    TruthTable,
    apply_gate,
    compose_gate,
    decode_label,
    encode_label,
    entangled_suite_states,
    evolve_entangled_suite,
    extract_transfer_matrix,
    ideal_gate,
    probe_suite,
    product_state,
    sample_counts,
    truth_table,
)
from .tomography import (
    TomographyDataset,
    build_probe_basis,
    chi_from_choi,
    choi_from_chi,
    choi_from_unitary,
    monte_carlo_uncertainty,
    process_fidelity,
    qpt_mle,
    qst_mle,
    simulate_dataset,
    simulate_state_dataset,
    state_fidelity,
)
from .config import ConfigError, RunConfig, load_config, make_config

__version__ = "0.1.0"
