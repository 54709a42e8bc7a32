"""Bit-flip noise by trajectory sampling, and the layered gate-error score.

Noise model: after every circuit layer, each qubit independently receives a
Pauli-X with probability ``p``.  A trajectory is one random draw of those
flips; noisy expectations are means over trajectories.

The error score compounds per-layer average gate error over the circuit::

    s = 1 - prod_j (1 - avg_err_j) ** m_j

where ``avg_err_j`` is the count-weighted mean error rate of the gates in
layer ``j`` and ``m_j`` is how many gates that layer holds.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import quantum_core as qc
from . import vqc as vqc_mod
from .errors import ConfigError, UsageError
from .quantum_core import Circuit, StateVector

# Heron median error rates: single-qubit gates ~0.03%, two-qubit CZ ~0.32%
HERON_SINGLE_QUBIT_ERROR = 0.0003
HERON_TWO_QUBIT_ERROR = 0.0032


@dataclass(frozen=True)
class NoiseConfig:
    bit_flip_p: float
    trajectories: int = 32
    eval_trajectories: int = 512
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.bit_flip_p <= 1.0:
            raise ConfigError(f"bit_flip_p must be in [0, 1], got {self.bit_flip_p}")
        if self.trajectories < 1 or self.eval_trajectories < 1:
            raise ConfigError("trajectory counts must be >= 1")

    @classmethod
    def from_dict(cls, data: dict) -> "NoiseConfig":
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class GateErrorTable:
    single_qubit_error: float = HERON_SINGLE_QUBIT_ERROR
    two_qubit_error: float = HERON_TWO_QUBIT_ERROR

    def __post_init__(self):
        for name in ("single_qubit_error", "two_qubit_error"):
            value = getattr(self, name)
            if not 0.0 <= value < 1.0:
                raise ConfigError(f"{name} must be in [0, 1), got {value}")

    @classmethod
    def from_dict(cls, data: dict) -> "GateErrorTable":
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ScoreBreakdown:
    layer_error_rates: list[float]
    layer_gate_counts: list[int]
    depth: int
    score: float
    skipped_empty_layers: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


# -- trajectories -------------------------------------------------------------

def noisy_apply_circuit(
    state: StateVector, circuit: Circuit, noise: NoiseConfig, rng: np.random.Generator
) -> StateVector:
    """One noise trajectory of ``circuit`` applied to ``state``.

    After each layer, one uniform draw per qubit in index order decides the flip.
    """
    if circuit.n_qubits != state.n_qubits:
        raise UsageError(
            f"circuit is {circuit.n_qubits} qubits wide, state has {state.n_qubits}"
        )
    n = state.n_qubits
    psi = state.amps[:, None].copy()
    for layer in circuit.layers:
        for gate in layer:
            psi = qc.apply_gate_batch(psi, n, gate)
        draws = rng.random(n)
        for q in range(n):
            if draws[q] < noise.bit_flip_p:
                psi = qc.apply_x_batch(psi, n, q)
    return StateVector(n, psi[:, 0])


def trajectory_expectations(
    circuit: Circuit,
    noise: NoiseConfig,
    n_trajectories: int,
    rng: np.random.Generator,
    qubits: Sequence[int] | None = None,
) -> np.ndarray:
    """Per-trajectory <Z> from ``|0...0>``, shape ``(n_trajectories, len(qubits))``.

    Consumes the generator exactly as ``n_trajectories`` successive calls of
    :func:`noisy_apply_circuit` would.
    """
    n = circuit.n_qubits
    qubits = list(range(n)) if qubits is None else list(qubits)
    flips = rng.random((n_trajectories, circuit.depth, n)) < noise.bit_flip_p
    psi = qc.zero_batch(n, n_trajectories)
    for j, layer in enumerate(circuit.layers):
        for gate in layer:
            psi = qc.apply_gate_batch(psi, n, gate)
        for q in range(n):
            if flips[:, j, q].any():
                psi = qc.apply_x_batch(psi, n, q, flips[:, j, q])
    return qc.expectation_z_batch(psi, n, qubits)


def sample_rng(rng_seed: int, sample_index: int, invocation: Sequence[int]) -> np.random.Generator:
    return np.random.default_rng([int(rng_seed), int(sample_index), *map(int, invocation)])


class NoiseStream:
    """Hands out flip masks for successive VQC invocations.

    Each call advances an invocation counter; the flips for one sample come
    from a generator seeded by ``(rng_seed, sample index, call_id, counter)``
    so any single evaluation can be regenerated in isolation.
    """

    def __init__(self, noise: NoiseConfig, trajectories: int, call_id: Sequence[int] = (0,)):
        self.noise = noise
        self.trajectories = int(trajectories)
        self.call_id = tuple(int(c) for c in call_id)
        self.counter = 0

    def flips(self, sample_ids, n_layers: int, n_qubits: int, n_circuits: int = 1) -> np.ndarray:
        """Masks of shape ``(n_circuits, B, T, n_layers, n_qubits)``."""
        self.counter += 1
        invocation = self.call_id + (self.counter,)
        shape = (n_circuits, self.trajectories, n_layers, n_qubits)
        p = self.noise.bit_flip_p
        per_sample = [
            sample_rng(self.noise.rng_seed, sid, invocation).random(shape) < p
            for sid in np.asarray(sample_ids).ravel()
        ]
        return np.stack(per_sample, axis=1)


def noisy_vqc_forward(
    spec: vqc_mod.VqcSpec,
    params,
    x,
    noise: NoiseConfig,
    sample_index: int = 0,
    invocation: Sequence[int] = (0,),
    trajectories: int | None = None,
) -> np.ndarray:
    """Trajectory-averaged Z readout of one VQC evaluation."""
    thetas = vqc_mod.check_params(spec, params)
    x = np.asarray(x, dtype=float)
    if thetas.shape != spec.theta_shape or x.shape != (spec.n_qubits,):
        raise UsageError("noisy_vqc_forward takes a single parameter set and input vector")
    n_traj = noise.trajectories if trajectories is None else int(trajectories)
    rng = sample_rng(noise.rng_seed, sample_index, invocation)
    flips = rng.random((n_traj, spec.n_layers, spec.n_qubits)) < noise.bit_flip_p
    return vqc_mod.forward_batch(spec, thetas, x, flips)


# -- error score --------------------------------------------------------------

def error_score(circuit: Circuit, table: GateErrorTable) -> ScoreBreakdown:
    if not isinstance(table, GateErrorTable):
        table = GateErrorTable(**table)
    if circuit.depth < 1:
        raise UsageError("cannot score a circuit with no layers")
    rates, counts = [], []
    skipped = 0
    survival = 1.0
    for layer in circuit.layers:
        if not layer:
            skipped += 1
            continue
        n2 = sum(1 for g in layer if g.is_two_qubit)
        n1 = len(layer) - n2
        avg = (n1 * table.single_qubit_error + n2 * table.two_qubit_error) / (n1 + n2)
        rates.append(avg)
        counts.append(len(layer))
        survival *= (1.0 - avg) ** len(layer)
    return ScoreBreakdown(
        layer_error_rates=rates,
        layer_gate_counts=counts,
        depth=circuit.depth,
        score=1.0 - survival,
        skipped_empty_layers=skipped,
    )


@dataclass
class ModelScore:
    n_qubits: int
    per_vqc: dict[str, ScoreBreakdown]
    mean: float
    max: float
    # probability that at least one of the cell's circuits fails
    compound: float
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "n_qubits": self.n_qubits,
            "per_vqc": {k: v.to_dict() for k, v in self.per_vqc.items()},
            "mean": self.mean,
            "max": self.max,
            "compound": self.compound,
        }


def score_qlstm_circuits(config, table: GateErrorTable | None = None) -> ModelScore:
    """Score every VQC of a QLSTM cell.

    Gate counts do not depend on angles, so circuits are built at zero input
    and zero parameters.
    """
    from .model import vqc_names

    table = table or GateErrorTable()
    spec = config.vqc_spec
    circuit = vqc_mod.build_vqc_circuit(spec, np.zeros(spec.theta_shape), np.zeros(spec.n_qubits))
    per = {name: error_score(circuit, table) for name in vqc_names(config)}
    scores = [b.score for b in per.values()]
    compound = 1.0 - float(np.prod([1.0 - s for s in scores]))
    return ModelScore(
        n_qubits=spec.n_qubits,
        per_vqc=per,
        mean=float(np.mean(scores)),
        max=float(np.max(scores)),
        compound=compound,
    )
