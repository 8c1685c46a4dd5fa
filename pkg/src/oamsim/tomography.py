"""Maximum-likelihood state and process tomography for the encoded system.

Probe states: the six single-qubit states (|0>, |1>, |+>, |->, |+i>, |-i>)
tensored three-fold in row-major order give 216 probe/projector states; the
same set serves as input preparations and projective measurements, and sums
to 27 * identity.

Process reconstruction iterates the trace-preserving maximum-likelihood
fixed point on the process operator E (input (x) output ordering):

    p_jk  = Tr(E . rho_j^T (x) Pi_k)
    R     = sum_jk (f_jk / p_jk) rho_j^T (x) Pi_k
    lam   = (Tr_out(R E R))^(1/2)
    E    <- (lam^-1 (x) I) R E R (lam^-1 (x) I)

starting from E = I/8. The log-likelihood sum(f ln p) is checked to be
non-decreasing at every accepted iterate, and the output partial trace stays
pinned to the identity by construction of lam.

Operator vectorization is column-stacking, so vec(A)[a*8+c] = A[c, a] and a
unitary U has process operator vec(U) vec(U)^dagger. The chi representation
uses the three-qubit Pauli basis normalized by 1/sqrt(8), which makes chi
trace-one and Tr(chi_a chi_b) a fidelity in [0, 1].
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .gate import GateOperator, sample_counts

DIM = 8

PROBABILITY_FLOOR = 1e-12

_PAULI_1 = (
    np.eye(2, dtype=complex),
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.array([[0, -1j], [1j, 0]], dtype=complex),
    np.array([[1, 0], [0, -1]], dtype=complex),
)

_PAULI_LABELS_1 = "IXYZ"


def single_qubit_probe_states() -> np.ndarray:
    """The 2x6 matrix whose columns are |0>, |1>, |+>, |->, |+i>, |-i>."""
    s = 1.0 / np.sqrt(2.0)
    return np.array(
        [
            [1, 0, s, s, s, s],
            [0, 1, s, -s, 1j * s, -1j * s],
        ],
        dtype=complex,
    )


def build_probe_basis() -> np.ndarray:
    """(216, 8) array of probe states, rows ordered by base-6 digit triples."""
    a = single_qubit_probe_states()
    b = np.kron(a, np.kron(a, a))
    return np.ascontiguousarray(b.T)


def probe_label(index: int) -> str:
    """Base-6 digits of a probe index using the single-qubit token order."""
    tokens = ("0", "1", "+", "-", "+i", "-i")
    d0, rest = divmod(index, 36)
    d1, d2 = divmod(rest, 6)
    return "|" + " ".join(tokens[d] for d in (d0, d1, d2)) + ">"


def pauli_operators() -> np.ndarray:
    """(64, 8, 8) stack of three-qubit Pauli products, index m = 16a+4b+c."""
    ops = np.empty((64, DIM, DIM), dtype=complex)
    i = 0
    for p in _PAULI_1:
        for q in _PAULI_1:
            for r in _PAULI_1:
                ops[i] = np.kron(p, np.kron(q, r))
                i += 1
    return ops


def pauli_label(index: int) -> str:
    d0, rest = divmod(index, 16)
    d1, d2 = divmod(rest, 4)
    return _PAULI_LABELS_1[d0] + _PAULI_LABELS_1[d1] + _PAULI_LABELS_1[d2]


def vec(matrix: np.ndarray) -> np.ndarray:
    """Column-stacking vectorization."""
    return np.asarray(matrix).T.reshape(-1)


def _pauli_vec_basis() -> np.ndarray:
    """64x64 matrix whose columns are vec(sigma_m)/sqrt(8)."""
    return np.stack([vec(s) for s in pauli_operators()], axis=1) / np.sqrt(DIM)


_PAULI_VECS = None


def _pauli_vecs() -> np.ndarray:
    global _PAULI_VECS
    if _PAULI_VECS is None:
        _PAULI_VECS = _pauli_vec_basis()
    return _PAULI_VECS


def choi_from_unitary(gate: GateOperator | np.ndarray) -> np.ndarray:
    """Process operator sum_jk |j><k| (x) U|j><k|U^dagger = vec(U)vec(U)^dagger."""
    u = gate.matrix if isinstance(gate, GateOperator) else np.asarray(gate, dtype=complex)
    v = vec(u)
    return np.outer(v, v.conj())


def chi_from_choi(choi: np.ndarray) -> np.ndarray:
    """Chi matrix in the normalized Pauli basis; trace-one for TP inputs."""
    basis = _pauli_vecs()
    return basis.conj().T @ (np.asarray(choi) / DIM) @ basis


def choi_from_chi(chi: np.ndarray) -> np.ndarray:
    """Inverse of :func:`chi_from_choi` (exact round trip)."""
    basis = _pauli_vecs()
    return DIM * (basis @ np.asarray(chi) @ basis.conj().T)


def partial_trace_output(choi: np.ndarray) -> np.ndarray:
    """Trace over the output factor of an input (x) output operator."""
    return np.einsum("acbc->ab", np.asarray(choi).reshape(DIM, DIM, DIM, DIM))


def check_density_matrix(rho: np.ndarray, name: str = "rho") -> None:
    r = np.asarray(rho)
    if np.max(np.abs(r - r.conj().T)) > 1e-9:
        raise ValueError(f"{name} is not Hermitian")
    eigs = np.linalg.eigvalsh((r + r.conj().T) / 2)
    if eigs.min() < -1e-8:
        raise ValueError(f"{name} has negative eigenvalue {eigs.min():.3g}")
    if abs(np.trace(r).real - 1.0) > 1e-6:
        raise ValueError(f"{name} trace is {np.trace(r).real}, expected 1")


def state_fidelity(a: np.ndarray, b: np.ndarray) -> float:
    """Uhlmann fidelity (Tr sqrt(sqrt(a) b sqrt(a)))^2, symmetric."""
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    for name, m in (("first state", a), ("second state", b)):
        eigs = np.linalg.eigvalsh((m + m.conj().T) / 2)
        if eigs.min() < -1e-8:
            raise ValueError(f"{name} is not positive semidefinite (min eig {eigs.min():.3g})")
    evals, evecs = np.linalg.eigh((a + a.conj().T) / 2)
    evals = np.clip(evals, 0.0, None)
    sqrt_a = (evecs * np.sqrt(evals)) @ evecs.conj().T
    inner = sqrt_a @ b @ sqrt_a
    inner_evals = np.linalg.eigvalsh((inner + inner.conj().T) / 2)
    root_sum = np.sum(np.sqrt(np.clip(inner_evals, 0.0, None)))
    return float(min(root_sum**2, 1.0))


def process_fidelity(chi_a: np.ndarray, chi_b: np.ndarray) -> float:
    """Re Tr(chi_a chi_b), clamped into [0, 1]."""
    value = float(np.real(np.trace(np.asarray(chi_a) @ np.asarray(chi_b))))
    return min(max(value, 0.0), 1.0)


@dataclass(frozen=True)
class TomographyDataset:
    """Counts (or exact frequencies) for inputs x projectors.

    ``input_indices`` is None for state-tomography datasets whose single input
    is not a member of the probe basis. ``mean_total`` is None for exact
    (noiseless) frequencies.
    """

    counts: np.ndarray
    projector_indices: tuple[int, ...]
    input_indices: tuple[int, ...] | None
    mean_total: float | None
    kind: str = "process"

    def __post_init__(self) -> None:
        c = np.asarray(self.counts, dtype=np.float64)
        if c.ndim != 2:
            raise ValueError("counts must be 2-D (inputs x projectors)")
        if not np.all(np.isfinite(c)) or np.any(c < 0):
            raise ValueError("counts must be finite and non-negative")
        if c.shape[1] != len(self.projector_indices):
            raise ValueError("one projector index per counts column required")
        if self.input_indices is not None and c.shape[0] != len(self.input_indices):
            raise ValueError("one input index per counts row required")
        if self.kind not in ("process", "state"):
            raise ValueError(f"dataset kind must be 'process' or 'state', got {self.kind!r}")
        object.__setattr__(self, "counts", c)


def output_probabilities(gate: GateOperator, states: np.ndarray) -> np.ndarray:
    """p[j, k] = |<s_k|G|s_j>|^2 with per-input renormalization."""
    psi = (gate.matrix @ states.T).T
    norms = np.linalg.norm(psi, axis=1)
    if np.any(norms == 0):
        raise ValueError("gate annihilated a probe state")
    psi = psi / norms[:, None]
    return np.abs(psi @ states.conj().T) ** 2


def simulate_dataset(
    gate: GateOperator,
    states: np.ndarray,
    mean_total: float | None = None,
    seed: int = 0,
) -> TomographyDataset:
    """Exact frequencies (mean_total None) or Poisson counts per (j, k)."""
    probs = output_probabilities(gate, states)
    indices = tuple(range(states.shape[0]))
    if mean_total is None:
        counts = probs
    else:
        counts = sample_counts(probs.ravel(), mean_total, seed).reshape(probs.shape)
    return TomographyDataset(
        counts=counts,
        projector_indices=indices,
        input_indices=indices,
        mean_total=mean_total,
        kind="process",
    )


def simulate_state_dataset(
    state: np.ndarray,
    states: np.ndarray,
    mean_total: float | None = None,
    seed: int = 0,
) -> TomographyDataset:
    """Projection data of one pure state onto the probe set."""
    psi = np.asarray(state, dtype=complex)
    psi = psi / np.linalg.norm(psi)
    probs = np.abs(states.conj() @ psi) ** 2
    if mean_total is None:
        counts = probs[None, :]
    else:
        counts = sample_counts(probs, mean_total, seed)[None, :].astype(float)
    return TomographyDataset(
        counts=counts,
        projector_indices=tuple(range(states.shape[0])),
        input_indices=None,
        mean_total=mean_total,
        kind="state",
    )


@dataclass
class QstResult:
    rho: np.ndarray
    iterations: int
    converged: bool
    log_likelihood: float


def qst_mle(
    frequencies: np.ndarray,
    states: np.ndarray,
    tol: float = 1e-10,
    max_iterations: int = 5000,
) -> QstResult:
    """Iterative R rho R reconstruction from projector frequencies.

    Falls back to the diluted update rho <- N[(I+eR) rho (I+eR)] with e=0.1
    if the plain fixed point oscillates (log-likelihood decrease).
    """
    f = np.asarray(frequencies, dtype=np.float64).ravel()
    if f.shape[0] != states.shape[0]:
        raise ValueError("one frequency per projector required")
    if np.all(f == 0):
        raise ValueError("all-zero counts cannot be inverted")
    rho = np.eye(DIM, dtype=complex) / DIM
    active = f > 0
    s_active = states[active]
    f_active = f[active]
    ll_prev = -np.inf
    diluted = False
    epsilon = 0.1
    converged = False
    iterations = 0
    for iterations in range(1, max_iterations + 1):
        p = np.real(np.einsum("ka,ab,kb->k", s_active.conj(), rho, s_active))
        p = np.maximum(p, PROBABILITY_FLOOR)
        ll = float(np.sum(f_active * np.log(p)))
        if ll < ll_prev - 1e-9 * max(1.0, abs(ll_prev)) and not diluted:
            diluted = True  # plain iteration oscillates; switch to damped form
        ll_prev = max(ll, ll_prev)
        weights = f_active / p
        r_op = np.einsum("k,ka,kb->ab", weights, s_active, s_active.conj())
        if diluted:
            step = np.eye(DIM) + epsilon * r_op / np.trace(r_op).real * DIM
            new_rho = step @ rho @ step.conj().T
        else:
            new_rho = r_op @ rho @ r_op.conj().T
        new_rho = (new_rho + new_rho.conj().T) / 2
        new_rho = new_rho / np.trace(new_rho).real
        delta = float(np.max(np.abs(new_rho - rho)))
        rho = new_rho
        if delta < tol:
            converged = True
            break
    eigs = np.linalg.eigvalsh(rho)
    if eigs.min() < -1e-10:
        evals, evecs = np.linalg.eigh(rho)
        rho = (evecs * np.clip(evals, 0.0, None)) @ evecs.conj().T
        rho = rho / np.trace(rho).real
    return QstResult(rho=rho, iterations=iterations, converged=converged, log_likelihood=ll_prev)


@dataclass
class QptResult:
    choi: np.ndarray
    iterations: int
    converged: bool
    log_likelihood: float


def _probabilities_from_choi(
    choi: np.ndarray, input_rows: np.ndarray, proj_rows: np.ndarray
) -> np.ndarray:
    e4 = choi.reshape(DIM, DIM, DIM, DIM)  # indices (a, c, b, d)
    e_perm = e4.transpose(0, 2, 1, 3).reshape(DIM * DIM, DIM * DIM)  # ((a,b),(c,d))
    partial = input_rows @ e_perm  # [j, (c, d)]
    return np.real(np.einsum("jm,km->jk", partial, proj_rows))


def qpt_mle(
    dataset: TomographyDataset,
    states: np.ndarray,
    tol: float = 1e-10,
    max_iterations: int = 2000,
) -> QptResult:
    """Trace-preserving MLE of the process operator from count data."""
    if dataset.kind != "process":
        raise ValueError("process tomography needs a process dataset")
    freqs = dataset.counts
    if dataset.input_indices is None:
        raise ValueError("process dataset must name its input states")
    in_states = states[list(dataset.input_indices)]
    proj_states = states[list(dataset.projector_indices)]
    if np.all(freqs == 0):
        raise ValueError("all-zero counts cannot be inverted")
    # input_rows[j, (a, b)] = s_j[a] conj(s_j[b]); its conjugate is rho_j^T
    input_rows = np.einsum(
        "ja,jb->jab", in_states, in_states.conj()
    ).reshape(in_states.shape[0], -1)
    # proj_rows[k, (c, d)] = conj(s_k[c]) s_k[d]; its conjugate is Pi_k
    proj_rows = np.einsum(
        "kc,kd->kcd", proj_states.conj(), proj_states
    ).reshape(proj_states.shape[0], -1)

    choi = np.eye(DIM * DIM, dtype=complex) / DIM
    n_data = freqs.size
    positive = freqs > 0
    ll_prev = -np.inf
    converged = False
    iterations = 0
    for iterations in range(1, max_iterations + 1):
        p = _probabilities_from_choi(choi, input_rows, proj_rows)
        p = np.maximum(p, PROBABILITY_FLOOR)
        ll = float(np.sum(freqs[positive] * np.log(p[positive])))
        if ll < ll_prev - 1e-9 * n_data:
            raise RuntimeError(
                f"log-likelihood decreased at iteration {iterations}: "
                f"{ll_prev} -> {ll}"
            )
        if iterations > 1 and abs(ll - ll_prev) / n_data < tol:
            converged = True
            break
        ll_prev = ll

        weights = np.where(positive, freqs / p, 0.0)
        # R[(a,c),(b,d)] = sum_jk w_jk conj(input_rows[j])_(a,b) conj(proj_rows[k])_(c,d)
        r_perm = input_rows.conj().T @ weights @ proj_rows.conj()
        r_op = (
            r_perm.reshape(DIM, DIM, DIM, DIM).transpose(0, 2, 1, 3).reshape(DIM * DIM, DIM * DIM)
        )
        rer = r_op @ choi @ r_op
        rer = (rer + rer.conj().T) / 2
        lam_sq = partial_trace_output(rer)
        evals, evecs = np.linalg.eigh((lam_sq + lam_sq.conj().T) / 2)
        if evals.max() <= 0:
            raise RuntimeError("iteration collapsed: Tr_out(R E R) not positive")
        tiny = evals < 1e-14 * evals.max()
        if np.any(tiny):
            inv_sqrt = np.where(tiny, 0.0, 1.0 / np.sqrt(np.where(tiny, 1.0, evals)))
        else:
            inv_sqrt = 1.0 / np.sqrt(evals)
        lam_inv = (evecs * inv_sqrt) @ evecs.conj().T
        lam_inv_full = np.kron(lam_inv, np.eye(DIM))
        choi = lam_inv_full @ rer @ lam_inv_full
        choi = (choi + choi.conj().T) / 2
        tp_defect = np.max(np.abs(partial_trace_output(choi) - np.eye(DIM)))
        if tp_defect > 1e-6:
            raise RuntimeError(
                f"trace preservation lost at iteration {iterations}: "
                f"defect {tp_defect:.3g}"
            )
    return QptResult(choi=choi, iterations=iterations, converged=converged, log_likelihood=ll_prev)


def monte_carlo_uncertainty(
    pipeline,
    dataset: TomographyDataset,
    trials: int,
    seed: int = 0,
) -> tuple[float, float]:
    """Poisson-resample the dataset counts and re-run ``pipeline``.

    Returns the sample mean and standard deviation of the metric. Trials whose
    pipeline raises are dropped; more than 10% drops is an error.
    """
    if trials < 10:
        raise ValueError(f"need at least 10 trials, got {trials}")
    if dataset.mean_total is None:
        # exact-frequency sentinel: there is no shot noise to resample
        return float(pipeline(dataset)), 0.0
    rng = np.random.default_rng(seed)
    values = []
    dropped = 0
    for _ in range(trials):
        resampled = rng.poisson(dataset.counts).astype(float)
        trial = TomographyDataset(
            counts=resampled,
            projector_indices=dataset.projector_indices,
            input_indices=dataset.input_indices,
            mean_total=dataset.mean_total,
            kind=dataset.kind,
        )
        try:
            values.append(float(pipeline(trial)))
        except Exception:
            dropped += 1
    if dropped > 0.1 * trials:
        raise RuntimeError(f"{dropped}/{trials} Monte Carlo trials failed")
    arr = np.asarray(values)
    return float(arr.mean()), float(arr.std(ddof=0))


def save_dataset(dataset: TomographyDataset, csv_path, meta: dict | None = None) -> None:
    """Write (j, k, count) rows plus a JSON sidecar naming the conventions."""
    csv_path = Path(csv_path)
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["input", "projector", "count"])
        for j in range(dataset.counts.shape[0]):
            for k in range(dataset.counts.shape[1]):
                writer.writerow([j, k, repr(float(dataset.counts[j, k]))])
    sidecar = {
        "schema_version": 1,
        "kind": dataset.kind,
        "basis": "pauli-eigenstates-6^3",
        "ordering": "base-6 digits over qubits (p, a, s); tokens 0,1,+,-,+i,-i",
        "normalization": "per-input",
        "n_inputs": dataset.counts.shape[0],
        "n_projectors": dataset.counts.shape[1],
        "projector_indices": list(dataset.projector_indices),
        "input_indices": None if dataset.input_indices is None else list(dataset.input_indices),
        "mean_total": dataset.mean_total,
    }
    if meta:
        sidecar.update(meta)
    with open(csv_path.with_suffix(".json"), "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_dataset(csv_path) -> TomographyDataset:
    """Read a dataset written by :func:`save_dataset`; errors carry line numbers."""
    csv_path = Path(csv_path)
    sidecar_path = csv_path.with_suffix(".json")
    if not sidecar_path.exists():
        raise ValueError(f"{csv_path}: missing sidecar {sidecar_path.name}")
    with open(sidecar_path) as fh:
        meta = json.load(fh)
    for key in ("kind", "n_inputs", "n_projectors", "projector_indices"):
        if key not in meta:
            raise ValueError(f"{sidecar_path}: sidecar is missing {key!r}")
    n_inputs = int(meta["n_inputs"])
    n_projectors = int(meta["n_projectors"])
    counts = np.full((n_inputs, n_projectors), np.nan)
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        for line_no, row in enumerate(reader, start=1):
            if line_no == 1:
                if row != ["input", "projector", "count"]:
                    raise ValueError(f"{csv_path}:{line_no}: bad header {row}")
                continue
            if len(row) != 3:
                raise ValueError(f"{csv_path}:{line_no}: expected 3 fields, got {len(row)}")
            try:
                j, k, value = int(row[0]), int(row[1]), float(row[2])
            except ValueError as exc:
                raise ValueError(f"{csv_path}:{line_no}: {exc}") from None
            if not (0 <= j < n_inputs and 0 <= k < n_projectors):
                raise ValueError(f"{csv_path}:{line_no}: index ({j}, {k}) out of range")
            counts[j, k] = value
    missing = np.argwhere(np.isnan(counts))
    if missing.size:
        j, k = missing[0]
        raise ValueError(f"{csv_path}: truncated dataset; first missing entry ({j}, {k})")
    return TomographyDataset(
        counts=counts,
        projector_indices=tuple(int(i) for i in meta["projector_indices"]),
        input_indices=None
        if meta.get("input_indices") is None
        else tuple(int(i) for i in meta["input_indices"]),
        mean_total=meta.get("mean_total"),
        kind=meta["kind"],
    )
