"""Dense statevector simulation for few-qubit circuits.

Amplitudes are stored little-endian: qubit ``q`` is bit ``q`` of the array
index, so ``|10>`` written as (q1 q0) lives at index 2.

Two layers of API live here.  The object API (:class:`StateVector`,
:class:`GateOp`, :class:`Circuit`, :func:`apply_gate`, ...) is what callers
and tests use.  The ``*_batch`` kernels operate on ``(2**n, B)`` arrays and
are what the variational layer uses to push many parameter/input settings
through the same circuit in one pass.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np

from .errors import ConfigError, ParseError, UsageError

MIN_QUBITS = 2
MAX_QUBITS = 14

SINGLE_QUBIT_KINDS = ("H", "X", "RX", "RY", "RZ")
TWO_QUBIT_KINDS = ("CNOT", "CZ")
ROTATION_KINDS = ("RX", "RY", "RZ")
GATE_KINDS = SINGLE_QUBIT_KINDS + TWO_QUBIT_KINDS

_SQRT1_2 = 1.0 / math.sqrt(2.0)
_H = np.array([[_SQRT1_2, _SQRT1_2], [_SQRT1_2, -_SQRT1_2]], dtype=complex)
_X = np.array([[0, 1], [1, 0]], dtype=complex)


def check_qubit_count(n_qubits: int) -> int:
    if isinstance(n_qubits, bool) or int(n_qubits) != n_qubits:
        raise ConfigError(f"qubit count must be an integer, got {n_qubits!r}")
    n_qubits = int(n_qubits)
    if not MIN_QUBITS <= n_qubits <= MAX_QUBITS:
        raise ConfigError(
            f"qubit count {n_qubits} outside supported range [{MIN_QUBITS}, {MAX_QUBITS}]"
        )
    return n_qubits


@dataclass(frozen=True)
class GateOp:
    """One gate: kind, target qubits, and an angle for rotations.

    For ``CNOT`` the targets are ``(control, target)``.  ``CZ`` is symmetric.
    """

    kind: str
    targets: tuple[int, ...]
    angle: float | None = None

    def __post_init__(self):
        kind = str(self.kind).upper()
        object.__setattr__(self, "kind", kind)
        if kind not in GATE_KINDS:
            raise UsageError(f"unknown gate kind {self.kind!r}")
        targets = tuple(int(t) for t in self.targets)
        object.__setattr__(self, "targets", targets)
        arity = 2 if kind in TWO_QUBIT_KINDS else 1
        if len(targets) != arity:
            raise UsageError(f"{kind} takes {arity} target(s), got {len(targets)}")
        if len(set(targets)) != len(targets):
            raise UsageError(f"{kind} targets must be distinct, got {targets}")
        if any(t < 0 for t in targets):
            raise UsageError(f"negative qubit index in {targets}")
        if kind in ROTATION_KINDS:
            if self.angle is None:
                raise UsageError(f"{kind} requires an angle")
            angle = float(self.angle)
            if not math.isfinite(angle):
                raise UsageError(f"{kind} angle must be finite, got {self.angle!r}")
            object.__setattr__(self, "angle", angle)
        elif self.angle is not None:
            raise UsageError(f"{kind} takes no angle")

    @property
    def is_two_qubit(self) -> bool:
        return self.kind in TWO_QUBIT_KINDS

    def to_token(self) -> str:
        targets = ",".join(str(t) for t in self.targets)
        if self.angle is None:
            return f"{self.kind}({targets})"
        return f"{self.kind}({targets};{self.angle!r})"


@dataclass
class Circuit:
    """Layered gate list.  Gates inside one layer act on disjoint qubits."""

    n_qubits: int
    layers: list[list[GateOp]] = field(default_factory=list)

    def __post_init__(self):
        self.n_qubits = check_qubit_count(self.n_qubits)
        self.layers = [list(layer) for layer in self.layers]
        for j, layer in enumerate(self.layers):
            _check_layer(layer, self.n_qubits, j)

    def append_layer(self, gates: Iterable[GateOp]) -> None:
        layer = list(gates)
        _check_layer(layer, self.n_qubits, len(self.layers))
        self.layers.append(layer)

    @property
    def depth(self) -> int:
        return len(self.layers)

    def gates(self) -> Iterator[GateOp]:
        for layer in self.layers:
            yield from layer

    def gate_count(self) -> int:
        return sum(len(layer) for layer in self.layers)

    def to_text(self) -> str:
        """Serialize one layer per line; an empty layer is written as ``-``."""
        lines = [f"# qubits={self.n_qubits}"]
        for layer in self.layers:
            lines.append(" ".join(g.to_token() for g in layer) if layer else "-")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, n_qubits: int | None = None) -> "Circuit":
        return parse_circuit(text, n_qubits=n_qubits)


def _check_layer(layer: list[GateOp], n_qubits: int, index: int) -> None:
    used: set[int] = set()
    for gate in layer:
        if not isinstance(gate, GateOp):
            raise UsageError(f"layer {index} holds a non-gate {gate!r}")
        for t in gate.targets:
            if t >= n_qubits:
                raise UsageError(
                    f"layer {index}: qubit {t} out of range for {n_qubits} qubits"
                )
            if t in used:
                raise UsageError(f"layer {index}: qubit {t} used by two gates")
            used.add(t)


_TOKEN = re.compile(
    r"\s*([A-Za-z]+)\(\s*([0-9]+(?:\s*,\s*[0-9]+)*)\s*(?:;\s*([^)\s]+)\s*)?\)"
)
_QUBITS_HEADER = re.compile(r"#\s*qubits\s*=\s*([0-9]+)")


def parse_circuit(text: str, n_qubits: int | None = None) -> Circuit:
    """Parse the line-oriented circuit format.

    Each non-comment line is a layer of ``KIND(targets;angle)`` tokens.  A
    line holding only ``-`` is an empty layer, blank lines are skipped and a
    ``# qubits=N`` comment fixes the register width (otherwise it is inferred
    from the largest target, with a floor of two qubits).
    """
    layers: list[list[GateOp]] = []
    declared = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            m = _QUBITS_HEADER.match(line)
            if m:
                declared = int(m.group(1))
            continue
        if line == "-":
            layers.append([])
            continue
        layer = []
        pos = 0
        while True:
            while pos < len(raw) and raw[pos].isspace():
                pos += 1
            if pos == len(raw):
                break
            m = _TOKEN.match(raw, pos)
            if m is None:
                raise ParseError("malformed gate token", position=pos + 1, line=lineno)
            kind, targets, angle = m.groups()
            try:
                gate = GateOp(
                    kind,
                    tuple(int(t) for t in targets.split(",")),
                    None if angle is None else float(angle),
                )
            except (UsageError, ValueError) as exc:
                raise ParseError(str(exc), position=pos + 1, line=lineno) from None
            layer.append(gate)
            pos = m.end()
        layers.append(layer)

    width = n_qubits if n_qubits is not None else declared
    if width is None:
        top = max((t for layer in layers for g in layer for t in g.targets), default=0)
        width = max(MIN_QUBITS, top + 1)
    try:
        return Circuit(width, layers)
    except UsageError as exc:
        raise ParseError(str(exc)) from None


class StateVector:
    """Pure state of ``n_qubits`` qubits as a dense complex array."""

    __slots__ = ("n_qubits", "amps")

    def __init__(self, n_qubits: int, amps: np.ndarray):
        self.n_qubits = check_qubit_count(n_qubits)
        amps = np.asarray(amps, dtype=complex)
        if amps.shape != (1 << self.n_qubits,):
            raise UsageError(
                f"expected {1 << self.n_qubits} amplitudes, got shape {amps.shape}"
            )
        if not np.all(np.isfinite(amps)):
            raise UsageError("amplitudes must be finite")
        self.amps = amps

    def norm_squared(self) -> float:
        return float(np.vdot(self.amps, self.amps).real)

    def copy(self) -> "StateVector":
        return StateVector(self.n_qubits, self.amps.copy())

    def __repr__(self):
        return f"StateVector(n_qubits={self.n_qubits}, amps={self.amps!r})"


def init_zero_state(n_qubits: int) -> StateVector:
    n_qubits = check_qubit_count(n_qubits)
    amps = np.zeros(1 << n_qubits, dtype=complex)
    amps[0] = 1.0
    return StateVector(n_qubits, amps)


# -- matrices ---------------------------------------------------------------

def rotation_matrices(kind: str, angles) -> np.ndarray:
    """Rotation unitaries for an array of angles, shape ``angles.shape + (2, 2)``."""
    angles = np.asarray(angles, dtype=float)
    c = np.cos(angles / 2)
    s = np.sin(angles / 2)
    out = np.zeros(angles.shape + (2, 2), dtype=complex)
    if kind == "RX":
        out[..., 0, 0] = c
        out[..., 1, 1] = c
        out[..., 0, 1] = -1j * s
        out[..., 1, 0] = -1j * s
    elif kind == "RY":
        out[..., 0, 0] = c
        out[..., 1, 1] = c
        out[..., 0, 1] = -s
        out[..., 1, 0] = s
    elif kind == "RZ":
        out[..., 0, 0] = c - 1j * s
        out[..., 1, 1] = c + 1j * s
    else:
        raise UsageError(f"{kind} is not a rotation")
    return out


def gate_unitary(gate: GateOp) -> np.ndarray:
    """Exact unitary of ``gate``.

    Two-qubit matrices use the local little-endian index
    ``bit(targets[0]) + 2 * bit(targets[1])``.
    """
    if gate.kind == "H":
        return _H.copy()
    if gate.kind == "X":
        return _X.copy()
    if gate.kind in ROTATION_KINDS:
        return rotation_matrices(gate.kind, gate.angle)
    if gate.kind == "CNOT":
        # control is local bit 0: swap |c=1,t=0> (1) with |c=1,t=1> (3)
        u = np.eye(4, dtype=complex)
        u[[1, 3]] = u[[3, 1]]
        return u
    return np.diag([1, 1, 1, -1]).astype(complex)


# -- batch kernels ------------------------------------------------------------
#
# A batch of states is a complex array ``psi`` of shape ``(2**n, B)``: one
# column per state.  Keeping the batch axis last means every update below is
# a handful of numpy ops over contiguous length-B vectors.

def _split_view(psi: np.ndarray, n: int, q: int) -> np.ndarray:
    return psi.reshape(1 << (n - 1 - q), 2, 1 << q, psi.shape[-1])


def zero_batch(n: int, batch: int) -> np.ndarray:
    psi = np.zeros((1 << n, batch), dtype=complex)
    psi[0] = 1.0
    return psi


def apply_1q_batch(psi: np.ndarray, n: int, q: int, u: np.ndarray) -> np.ndarray:
    """Apply a fixed 2x2 unitary to qubit ``q`` of every state."""
    view = _split_view(psi, n, q)
    a0 = view[:, 0]
    a1 = view[:, 1]
    out = np.empty_like(view)
    out[:, 0] = u[0, 0] * a0 + u[0, 1] * a1
    out[:, 1] = u[1, 0] * a0 + u[1, 1] * a1
    return out.reshape(psi.shape)


def apply_rotation_batch(psi: np.ndarray, n: int, q: int, kind: str, angles) -> np.ndarray:
    """RX/RY/RZ on qubit ``q`` with one angle per state (or one shared angle)."""
    half = np.asarray(angles, dtype=float) / 2
    c = np.cos(half)
    s = np.sin(half)
    view = _split_view(psi, n, q)
    a0 = view[:, 0]
    a1 = view[:, 1]
    out = np.empty_like(view)
    if kind == "RY":
        out[:, 0] = c * a0 - s * a1
        out[:, 1] = s * a0 + c * a1
    elif kind == "RX":
        js = 1j * s
        out[:, 0] = c * a0 - js * a1
        out[:, 1] = c * a1 - js * a0
    elif kind == "RZ":
        phase = c - 1j * s
        out[:, 0] = phase * a0
        out[:, 1] = np.conj(phase) * a1
    else:
        raise UsageError(f"{kind} is not a rotation")
    return out.reshape(psi.shape)


def apply_x_batch(psi: np.ndarray, n: int, q: int, mask: np.ndarray | None = None) -> np.ndarray:
    """Pauli-X on qubit ``q``.

    With a boolean ``mask`` over the batch only the marked states are flipped,
    and ``psi`` is updated in place.
    """
    view = _split_view(psi, n, q)
    if mask is None:
        return np.ascontiguousarray(view[:, ::-1]).reshape(psi.shape)
    hit = np.flatnonzero(mask)
    if hit.size:
        view[..., hit] = view[:, ::-1][..., hit]
    return psi


def _tensor_view(psi: np.ndarray, n: int) -> np.ndarray:
    # axis 0 is the most significant qubit, so qubit q sits on axis n - 1 - q
    return psi.reshape((2,) * n + (psi.shape[-1],))


def apply_cnot_batch(psi: np.ndarray, n: int, control: int, target: int) -> np.ndarray:
    t = _tensor_view(psi, n)
    out = t.copy()
    sel = [slice(None)] * (n + 1)
    sel[n - 1 - control] = 1
    sel = tuple(sel)
    t_axis = n - 1 - target
    if t_axis > n - 1 - control:
        t_axis -= 1
    out[sel] = np.flip(t[sel], axis=t_axis)
    return out.reshape(psi.shape)


def apply_cz_batch(psi: np.ndarray, n: int, a: int, b: int) -> np.ndarray:
    out = _tensor_view(psi, n).copy()
    sel = [slice(None)] * (n + 1)
    sel[n - 1 - a] = 1
    sel[n - 1 - b] = 1
    out[tuple(sel)] *= -1
    return out.reshape(psi.shape)


def apply_gate_batch(psi: np.ndarray, n: int, gate: GateOp) -> np.ndarray:
    if gate.kind == "H":
        return apply_1q_batch(psi, n, gate.targets[0], _H)
    if gate.kind == "X":
        return apply_x_batch(psi, n, gate.targets[0])
    if gate.kind in ROTATION_KINDS:
        return apply_rotation_batch(psi, n, gate.targets[0], gate.kind, gate.angle)
    if gate.kind == "CNOT":
        return apply_cnot_batch(psi, n, *gate.targets)
    return apply_cz_batch(psi, n, *gate.targets)


def expectation_z_batch(psi: np.ndarray, n: int, qubits: Iterable[int]) -> np.ndarray:
    """<Z_q> per state and requested qubit, shape ``(B, len(qubits))``.

    Computed as ``(p0 - p1) / (p0 + p1)``: rounding is monotonic, so the
    ratio can never leave [-1, 1] the way a bare ``p0 - p1`` can after
    accumulated norm drift.
    """
    probs = psi.real**2 + psi.imag**2
    out = []
    for q in qubits:
        view = probs.reshape(1 << (n - 1 - q), 2, 1 << q, psi.shape[-1])
        p0 = view[:, 0].sum(axis=(0, 1))
        p1 = view[:, 1].sum(axis=(0, 1))
        out.append((p0 - p1) / (p0 + p1))
    return np.stack(out, axis=1)


# -- object API ---------------------------------------------------------------

def _check_targets(state: StateVector, gate: GateOp) -> None:
    for t in gate.targets:
        if t >= state.n_qubits:
            raise UsageError(f"qubit {t} out of range for {state.n_qubits} qubits")


def apply_gate(state: StateVector, gate: GateOp) -> StateVector:
    _check_targets(state, gate)
    psi = apply_gate_batch(state.amps[:, None], state.n_qubits, gate)
    return StateVector(state.n_qubits, psi[:, 0])


def apply_circuit(state: StateVector, circuit: Circuit) -> StateVector:
    if circuit.n_qubits != state.n_qubits:
        raise UsageError(
            f"circuit is {circuit.n_qubits} qubits wide, state has {state.n_qubits}"
        )
    psi = state.amps[:, None].copy()
    n = state.n_qubits
    for layer in circuit.layers:
        for gate in layer:
            psi = apply_gate_batch(psi, n, gate)
    return StateVector(n, psi[:, 0])


def expectation_z(state: StateVector, qubit: int) -> float:
    if not 0 <= qubit < state.n_qubits:
        raise UsageError(f"qubit {qubit} out of range for {state.n_qubits} qubits")
    return float(expectation_z_batch(state.amps[:, None], state.n_qubits, [qubit])[0, 0])
