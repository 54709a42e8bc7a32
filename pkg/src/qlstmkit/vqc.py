"""Variational quantum circuit: angle encoding, trainable rotations, Z readout.

Circuit layout for ``n`` qubits and ``depth`` variational layers::

    H on every qubit
    RY(arctan x_i) on every qubit
    RZ(arctan x_i**2) on every qubit
    depth x [ CNOT ring (i -> i+1 mod n), RX, RY, RZ rotation layers ]

The CNOT ring is packed into parallel layers: edges with even ``i`` first,
then odd ``i``; for odd ``n`` the wrap-around edge ``n-1 -> 0`` gets a third
layer because it shares qubit 0 with the first edge.

Every angle in the circuit is addressed by a slot in one flat vector::

    [0, n)        encoding RY angles
    [n, 2n)       encoding RZ angles
    [2n, 2n + 3*n*depth)  trainable thetas in (layer, qubit, axis) order

which lets the parameter-shift rule treat inputs and weights uniformly.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import quantum_core as qc
from .errors import ConfigError, UsageError
from .quantum_core import Circuit, GateOp

ENTANGLERS = ("ring_cnot", "none")
SHIFT = np.pi / 2

# soft cap on complex amplitudes held per simulation chunk
_MAX_CHUNK_AMPS = 1 << 22


@dataclass(frozen=True)
class VqcSpec:
    n_qubits: int
    depth: int = 1
    entangler: str = "ring_cnot"
    output_dim: int | None = None

    def __post_init__(self):
        qc.check_qubit_count(self.n_qubits)
        if self.depth < 1:
            raise ConfigError(f"depth must be >= 1, got {self.depth}")
        if self.entangler not in ENTANGLERS:
            raise ConfigError(f"entangler must be one of {ENTANGLERS}, got {self.entangler!r}")
        if self.output_dim is None:
            object.__setattr__(self, "output_dim", self.n_qubits)
        if not 1 <= self.output_dim <= self.n_qubits:
            raise ConfigError(
                f"output_dim {self.output_dim} must be in [1, n_qubits={self.n_qubits}]"
            )

    @property
    def theta_shape(self) -> tuple[int, int, int]:
        return (self.depth, self.n_qubits, 3)

    @property
    def n_thetas(self) -> int:
        return self.depth * self.n_qubits * 3

    @property
    def n_angles(self) -> int:
        return 2 * self.n_qubits + self.n_thetas

    @property
    def n_layers(self) -> int:
        return len(_layout(self))

    @property
    def n_gates(self) -> int:
        n_ent = self.n_qubits if self.entangler == "ring_cnot" else 0
        return 3 * self.n_qubits + self.depth * (n_ent + 3 * self.n_qubits)


@dataclass
class VqcGradient:
    d_thetas: np.ndarray
    d_input: np.ndarray


def init_params(spec: VqcSpec, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(-np.pi, np.pi, size=spec.theta_shape)


def check_params(spec: VqcSpec, thetas) -> np.ndarray:
    thetas = np.asarray(thetas, dtype=float)
    if thetas.shape[-3:] != spec.theta_shape:
        raise UsageError(f"thetas shape {thetas.shape} does not end in {spec.theta_shape}")
    if not np.all(np.isfinite(thetas)):
        raise UsageError("thetas must be finite")
    return thetas


def _check_input(spec: VqcSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0 or x.shape[-1] != spec.n_qubits:
        raise UsageError(f"input must have trailing length {spec.n_qubits}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise UsageError("input must be finite")
    return x


def ring_layers(n: int) -> list[list[tuple[int, int]]]:
    even = [(i, (i + 1) % n) for i in range(0, n, 2)]
    odd = [(i, (i + 1) % n) for i in range(1, n, 2)]
    if n % 2 == 0:
        return [even, odd]
    return [even[:-1], odd, [even[-1]]]


@lru_cache(maxsize=None)
def _layout(spec: VqcSpec) -> tuple[tuple[tuple[str, tuple[int, ...], int], ...], ...]:
    """Layers of ``(kind, targets, angle_slot)``; slot is -1 for fixed gates."""
    n = spec.n_qubits
    layers = [
        tuple(("H", (q,), -1) for q in range(n)),
        tuple(("RY", (q,), q) for q in range(n)),
        tuple(("RZ", (q,), n + q) for q in range(n)),
    ]
    for l in range(spec.depth):
        if spec.entangler == "ring_cnot":
            for edges in ring_layers(n):
                layers.append(tuple(("CNOT", e, -1) for e in edges))
        base = 2 * n + l * n * 3
        for axis, kind in enumerate(("RX", "RY", "RZ")):
            layers.append(tuple((kind, (q,), base + q * 3 + axis) for q in range(n)))
    return tuple(layers)


def encode_angles(x) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    return np.arctan(x), np.arctan(x * x)


def flat_angles(spec: VqcSpec, thetas, x) -> np.ndarray:
    """Flat angle vectors, broadcasting the leading dims of ``thetas`` and ``x``."""
    ry, rz = encode_angles(x)
    t = np.asarray(thetas, dtype=float)
    t = t.reshape(t.shape[:-3] + (spec.n_thetas,))
    lead = np.broadcast_shapes(ry.shape[:-1], t.shape[:-1])
    return np.concatenate(
        [
            np.broadcast_to(ry, lead + ry.shape[-1:]),
            np.broadcast_to(rz, lead + rz.shape[-1:]),
            np.broadcast_to(t, lead + t.shape[-1:]),
        ],
        axis=-1,
    )


def encode_input(x, n_qubits: int) -> list[list[GateOp]]:
    x = np.asarray(x, dtype=float)
    if x.shape != (n_qubits,):
        raise UsageError(f"input length {x.shape} does not match {n_qubits} qubits")
    if not np.all(np.isfinite(x)):
        raise UsageError("input must be finite")
    ry, rz = encode_angles(x)
    return [
        [GateOp("H", (q,)) for q in range(n_qubits)],
        [GateOp("RY", (q,), float(ry[q])) for q in range(n_qubits)],
        [GateOp("RZ", (q,), float(rz[q])) for q in range(n_qubits)],
    ]


def build_vqc_circuit(spec: VqcSpec, params, x) -> Circuit:
    thetas = check_params(spec, params)
    if thetas.shape != spec.theta_shape:
        raise UsageError(f"expected thetas of shape {spec.theta_shape}, got {thetas.shape}")
    x = _check_input(spec, x)
    if x.shape != (spec.n_qubits,):
        raise UsageError(f"expected a single input vector, got shape {x.shape}")
    angles = flat_angles(spec, thetas, x)
    layers = []
    for layer in _layout(spec):
        layers.append(
            [GateOp(kind, targets, None if slot < 0 else float(angles[slot]))
             for kind, targets, slot in layer]
        )
    return Circuit(spec.n_qubits, layers)


def _simulate_rows(spec: VqcSpec, angles: np.ndarray, flips: np.ndarray | None) -> np.ndarray:
    """``angles`` is ``(R, n_angles)``, ``flips`` ``(R, n_layers, n)``; returns ``(R, output_dim)``."""
    n = spec.n_qubits
    psi = qc.zero_batch(n, angles.shape[0])
    for j, layer in enumerate(_layout(spec)):
        for kind, targets, slot in layer:
            if kind == "CNOT":
                psi = qc.apply_cnot_batch(psi, n, *targets)
            elif kind == "H":
                psi = qc.apply_1q_batch(psi, n, targets[0], qc._H)
            else:
                psi = qc.apply_rotation_batch(psi, n, targets[0], kind, angles[:, slot])
        if flips is not None:
            for q in range(n):
                mask = flips[:, j, q]
                if mask.any():
                    psi = qc.apply_x_batch(psi, n, q, mask)
    return qc.expectation_z_batch(psi, n, range(spec.output_dim))


def simulate_angles(spec: VqcSpec, angles, flips=None) -> np.ndarray:
    """Z expectations for flat angle vectors of shape ``(..., n_angles)``.

    ``flips`` is an optional boolean array ``(..., T, n_layers, n_qubits)``
    marking a Pauli-X after layer ``j`` on qubit ``q`` for trajectory ``T``;
    its leading dims broadcast against the angles' and the result is the
    mean over trajectories.  Output shape is ``(..., output_dim)``.
    """
    angles = np.asarray(angles, dtype=float)
    if angles.shape[-1] != spec.n_angles:
        raise UsageError(f"expected {spec.n_angles} angles, got {angles.shape[-1]}")
    if flips is None:
        lead = angles.shape[:-1]
        out = _simulate_chunked(spec, angles.reshape(-1, spec.n_angles), None)
        return out.reshape(lead + (spec.output_dim,))

    flips = np.asarray(flips, dtype=bool)
    if flips.shape[-2:] != (spec.n_layers, spec.n_qubits):
        raise UsageError(
            f"flip mask must end in {(spec.n_layers, spec.n_qubits)}, got {flips.shape}"
        )
    lead = np.broadcast_shapes(angles.shape[:-1], flips.shape[:-3])
    n_traj = flips.shape[-3]
    flip_lead = flips.shape[:-3]
    n_owners = int(np.prod(flip_lead, dtype=np.int64))

    # Trajectories repeat flip patterns a lot (the no-flip pattern above
    # all), so each owner's distinct patterns are simulated once and weighted
    # by how often they occurred.
    pattern_bits = flips.reshape(n_owners * n_traj, -1)
    packed = np.packbits(pattern_bits, axis=1)
    owner = np.repeat(np.arange(n_owners, dtype=np.int64), n_traj)
    keys = np.ascontiguousarray(np.concatenate([owner[:, None].view(np.uint8), packed], axis=1))
    keys = keys.view(np.dtype((np.void, keys.shape[1]))).ravel()
    _, first, counts = np.unique(keys, return_index=True, return_counts=True)
    u_owner = owner[first]  # sorted by owner because the owner bytes lead the key
    per_owner = np.bincount(u_owner, minlength=n_owners)
    owner_start = np.concatenate([[0], np.cumsum(per_owner)[:-1]])

    flat = np.broadcast_to(angles, lead + (spec.n_angles,)).reshape(-1, spec.n_angles)
    row_owner = np.broadcast_to(
        np.arange(n_owners, dtype=np.int64).reshape(flip_lead), lead
    ).ravel()
    n_pairs = per_owner[row_owner]
    pair_row = np.repeat(np.arange(flat.shape[0]), n_pairs)
    offsets = np.arange(pair_row.size) - np.repeat(np.cumsum(n_pairs) - n_pairs, n_pairs)
    pair_pattern = owner_start[row_owner][pair_row] + offsets

    pattern_flips = flips.reshape((n_owners * n_traj,) + flips.shape[-2:])[first]
    out = _simulate_chunked(spec, flat[pair_row], pattern_flips[pair_pattern])
    weights = counts[pair_pattern] / n_traj
    summed = np.zeros((flat.shape[0], spec.output_dim))
    np.add.at(summed, pair_row, out * weights[:, None])
    return summed.reshape(lead + (spec.output_dim,))


def _simulate_chunked(spec: VqcSpec, flat: np.ndarray, flat_flips: np.ndarray | None) -> np.ndarray:
    chunk = max(1, _MAX_CHUNK_AMPS >> spec.n_qubits)
    if flat.shape[0] <= chunk:
        return _simulate_rows(spec, flat, flat_flips)
    parts = []
    for start in range(0, flat.shape[0], chunk):
        stop = start + chunk
        parts.append(
            _simulate_rows(
                spec, flat[start:stop], None if flat_flips is None else flat_flips[start:stop]
            )
        )
    return np.concatenate(parts, axis=0)


def forward_batch(spec: VqcSpec, thetas, x, flips=None) -> np.ndarray:
    thetas = check_params(spec, thetas)
    x = _check_input(spec, x)
    return simulate_angles(spec, flat_angles(spec, thetas, x), flips)


def vqc_forward(spec: VqcSpec, params, x) -> np.ndarray:
    thetas = check_params(spec, params)
    x = _check_input(spec, x)
    if thetas.shape != spec.theta_shape or x.shape != (spec.n_qubits,):
        raise UsageError("vqc_forward takes a single parameter set and input vector")
    return simulate_angles(spec, flat_angles(spec, thetas, x))


@lru_cache(maxsize=None)
def _shift_table(n_angles: int) -> np.ndarray:
    table = np.zeros((2 * n_angles, n_angles))
    idx = np.arange(n_angles)
    table[2 * idx, idx] = SHIFT
    table[2 * idx + 1, idx] = -SHIFT
    return table


def shift_grad_batch(spec: VqcSpec, thetas, x, upstream, flips=None):
    """Parameter-shift gradient of ``sum_k upstream_k * <Z_k>``.

    Leading dims of ``thetas``, ``x`` and ``upstream`` broadcast together.
    Returns ``(d_thetas, d_x)`` with shapes ``lead + theta_shape`` and
    ``lead + (n_qubits,)``.  The flip mask, if given, is reused across all
    shifted evaluations of the same row.
    """
    thetas = check_params(spec, thetas)
    x = _check_input(spec, x)
    upstream = np.asarray(upstream, dtype=float)
    if upstream.shape[-1] != spec.output_dim:
        raise UsageError(f"upstream must have length {spec.output_dim}, got {upstream.shape}")

    base = flat_angles(spec, thetas, x)
    shifted = base[..., None, :] + _shift_table(spec.n_angles)
    if flips is not None:
        flips = np.asarray(flips, dtype=bool)[..., None, :, :, :]
    out = simulate_angles(spec, shifted, flips)
    out = out.reshape(out.shape[:-2] + (spec.n_angles, 2, spec.output_dim))
    d_f = (out[..., 0, :] - out[..., 1, :]) / 2
    d_angles = np.einsum("...pk,...k->...p", d_f, upstream)

    n = spec.n_qubits
    d_ry = d_angles[..., :n]
    d_rz = d_angles[..., n : 2 * n]
    x2 = x * x
    d_x = d_ry / (1 + x2) + d_rz * (2 * x) / (1 + x2 * x2)
    d_thetas = d_angles[..., 2 * n :].reshape(d_angles.shape[:-1] + spec.theta_shape)
    return d_thetas, d_x


def parameter_shift_grad(spec: VqcSpec, params, x, upstream) -> VqcGradient:
    thetas = check_params(spec, params)
    x = _check_input(spec, x)
    upstream = np.asarray(upstream, dtype=float)
    if thetas.shape != spec.theta_shape or x.shape != (spec.n_qubits,):
        raise UsageError("parameter_shift_grad takes a single parameter set and input vector")
    if upstream.shape != (spec.output_dim,):
        raise UsageError(f"upstream must have shape ({spec.output_dim},), got {upstream.shape}")
    d_thetas, d_x = shift_grad_batch(spec, thetas, x, upstream)
    return VqcGradient(d_thetas=d_thetas, d_input=d_x)
