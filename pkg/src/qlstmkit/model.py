"""QLSTM and classical LSTM sequence classifiers over bit fingerprints.

A fingerprint of ``fp_bits`` bits is cut into ``seq_len`` chunks of
``chunk_dim`` bits.  At each step the chunk is concatenated with the previous
hidden state and projected to ``n_qubits`` values ``u``; the gates read ``u``:

    QLSTM                                  LSTM
    f = sigmoid(VQC_f(u))                  f = sigmoid(W_f u + b_f)
    i = sigmoid(VQC_i(u))                  i = sigmoid(W_i u + b_i)
    g = tanh(VQC_c(u))                     g = tanh(W_c u + b_c)
    o = sigmoid(VQC_o(u))                  o = sigmoid(W_o u + b_o)
    c = f * c_prev + i * g                 c = f * c_prev + i * g
    h = VQC_h(o * tanh(c))                 h = o * tanh(c)

With ``share_output_vqc`` the QLSTM reuses ``VQC_o`` for the hidden readout.
The final hidden state goes through an affine head to ``n_tasks`` logits.

Everything works on batches: fingerprints are ``(B, fp_bits)`` arrays and
parameters are a flat ``dict[str, ndarray]`` in a fixed declared order.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import quantum_core as qc
from .errors import ConfigError, UsageError
from .vqc import ENTANGLERS, VqcSpec, forward_batch, init_params as init_vqc, shift_grad_batch

MODEL_KINDS = ("qlstm", "lstm")
GATE_VQCS = ("vqc_forget", "vqc_input", "vqc_candidate", "vqc_output")
LSTM_GATES = ("forget", "input", "candidate", "output")
CLASSICAL_INIT_SCALE = 0.1


@dataclass(frozen=True)
class QlstmConfig:
    n_qubits: int = 4
    seq_len: int = 8
    chunk_dim: int = 128
    depth: int = 1
    entangler: str = "ring_cnot"
    n_tasks: int = 1
    share_output_vqc: bool = False
    fp_bits: int = 1024

    def __post_init__(self):
        try:
            qc.check_qubit_count(self.n_qubits)
        except ConfigError as exc:
            raise ConfigError(f"n_qubits: {exc}") from None
        if self.chunk_dim < 1:
            raise ConfigError(f"chunk_dim must be >= 1, got {self.chunk_dim}")
        if self.seq_len < 1:
            raise ConfigError(f"seq_len must be >= 1, got {self.seq_len}")
        if self.seq_len * self.chunk_dim != self.fp_bits:
            raise ConfigError(
                f"seq_len * chunk_dim = {self.seq_len * self.chunk_dim} "
                f"must equal fp_bits = {self.fp_bits}"
            )
        if self.n_tasks < 1:
            raise ConfigError(f"n_tasks must be >= 1, got {self.n_tasks}")
        if self.depth < 1:
            raise ConfigError(f"depth must be >= 1, got {self.depth}")
        if self.entangler not in ENTANGLERS:
            raise ConfigError(f"entangler must be one of {ENTANGLERS}, got {self.entangler!r}")

    @property
    def hidden_dim(self) -> int:
        return self.n_qubits

    @property
    def vqc_spec(self) -> VqcSpec:
        return VqcSpec(self.n_qubits, self.depth, self.entangler, self.n_qubits)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "QlstmConfig":
        data = dict(data)
        # chunk_dim may be left out and derived from fp_bits / seq_len
        if "chunk_dim" not in data:
            fp_bits = data.get("fp_bits", 1024)
            seq_len = data.get("seq_len", 8)
            if fp_bits % seq_len:
                raise ConfigError(f"fp_bits={fp_bits} is not divisible by seq_len={seq_len}")
            data["chunk_dim"] = fp_bits // seq_len
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown model config field(s): {sorted(unknown)}")
        return cls(**data)


@dataclass
class CellState:
    c: np.ndarray
    h: np.ndarray


def vqc_names(config: QlstmConfig) -> list[str]:
    names = list(GATE_VQCS)
    if not config.share_output_vqc:
        names.append("vqc_hidden")
    return names


def _hidden_vqc(config: QlstmConfig) -> str:
    return "vqc_output" if config.share_output_vqc else "vqc_hidden"


def param_shapes(kind: str, config: QlstmConfig) -> dict[str, tuple[int, ...]]:
    n, k = config.n_qubits, config.n_tasks
    shapes: dict[str, tuple[int, ...]] = {
        "w_in": (config.chunk_dim + n, n),
        "b_in": (n,),
    }
    if kind == "qlstm":
        for name in vqc_names(config):
            shapes[name] = config.vqc_spec.theta_shape
    elif kind == "lstm":
        for gate in LSTM_GATES:
            shapes[f"w_{gate}"] = (n, n)
            shapes[f"b_{gate}"] = (n,)
    else:
        raise ConfigError(f"model must be one of {MODEL_KINDS}, got {kind!r}")
    shapes["w_out"] = (n, k)
    shapes["b_out"] = (k,)
    return shapes


def param_count(kind: str, config: QlstmConfig) -> int:
    """Trainable parameter count from the closed-form layer sizes."""
    n, k, d = config.n_qubits, config.n_tasks, config.depth
    projection = (config.chunk_dim + n) * n + n
    head = n * k + k
    if kind == "qlstm":
        n_vqc = 4 if config.share_output_vqc else 5
        return projection + n_vqc * d * n * 3 + head
    if kind == "lstm":
        return projection + 4 * (n * n + n) + head
    raise ConfigError(f"model must be one of {MODEL_KINDS}, got {kind!r}")


def init_params(kind: str, config: QlstmConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    params = {}
    for name, shape in param_shapes(kind, config).items():
        if name.startswith("vqc_"):
            params[name] = init_vqc(config.vqc_spec, rng)
        else:
            params[name] = rng.uniform(-CLASSICAL_INIT_SCALE, CLASSICAL_INIT_SCALE, size=shape)
    return params


def check_params(kind: str, config: QlstmConfig, params: dict[str, np.ndarray]) -> None:
    shapes = param_shapes(kind, config)
    if set(params) != set(shapes):
        raise UsageError(
            f"parameter names {sorted(params)} do not match {kind} layout {sorted(shapes)}"
        )
    for name, shape in shapes.items():
        if np.shape(params[name]) != shape:
            raise UsageError(f"{name} has shape {np.shape(params[name])}, expected {shape}")


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def make_vt(x_chunk, h_prev) -> np.ndarray:
    x_chunk = np.asarray(x_chunk, dtype=float)
    h_prev = np.asarray(h_prev, dtype=float)
    if x_chunk.shape[-1] < 1:
        raise UsageError("input chunk must hold at least one value")
    if x_chunk.shape[:-1] != h_prev.shape[:-1]:
        raise UsageError(f"batch shapes differ: {x_chunk.shape} vs {h_prev.shape}")
    return np.concatenate([x_chunk, h_prev], axis=-1)


def cell_update(f, i, g, c_prev):
    """Memory update ``c = f * c_prev + i * g``."""
    return f * c_prev + i * g


def cell_update_backward(d_c, f, i, g, c_prev):
    """Returns ``(d_f, d_i, d_g, d_c_prev)`` for :func:`cell_update`."""
    return d_c * c_prev, d_c * g, d_c * i, d_c * f


def zero_state(config: QlstmConfig, batch: int) -> CellState:
    n = config.hidden_dim
    return CellState(c=np.zeros((batch, n)), h=np.zeros((batch, n)))


# -- cells --------------------------------------------------------------------

def _check_step(config, x_chunk, prev):
    if x_chunk.ndim != 2 or x_chunk.shape[1] != config.chunk_dim:
        raise UsageError(f"chunk must be (B, {config.chunk_dim}), got {x_chunk.shape}")
    if prev.h.shape != (x_chunk.shape[0], config.hidden_dim) or prev.c.shape != prev.h.shape:
        raise UsageError("previous cell state does not match batch/hidden size")


def qlstm_cell_forward(params, config: QlstmConfig, x_chunk, prev: CellState,
                       noise=None, sample_ids=None):
    """One QLSTM step over a batch.  Returns ``(CellState, cache)``.

    ``noise`` is an optional :class:`~qlstmkit.noise.NoiseStream`; flip masks
    drawn for the step are kept in the cache so backward uses the same ones.
    """
    x_chunk = np.atleast_2d(np.asarray(x_chunk, dtype=float))
    _check_step(config, x_chunk, prev)
    spec = config.vqc_spec
    v = make_vt(x_chunk, prev.h)
    u = v @ params["w_in"] + params["b_in"]

    gate_thetas = np.stack([params[name] for name in GATE_VQCS])[:, None]
    flips_g = flips_h = None
    if noise is not None:
        flips_g = noise.flips(sample_ids, spec.n_layers, spec.n_qubits, len(GATE_VQCS))
        flips_h = noise.flips(sample_ids, spec.n_layers, spec.n_qubits, 1)[0]
    q = forward_batch(spec, gate_thetas, u[None], flips_g)
    f, i, o = sigmoid(q[0]), sigmoid(q[1]), sigmoid(q[3])
    g = np.tanh(q[2])
    c = cell_update(f, i, g, prev.c)
    tc = np.tanh(c)
    z = o * tc
    h = forward_batch(spec, params[_hidden_vqc(config)], z, flips_h)
    cache = dict(v=v, u=u, f=f, i=i, g=g, o=o, c_prev=prev.c, c=c, tc=tc, z=z,
                 flips_g=flips_g, flips_h=flips_h)
    return CellState(c=c, h=h), cache


def qlstm_cell_backward(params, config: QlstmConfig, cache, d_h, d_c, grads):
    """Accumulate parameter gradients into ``grads``; return ``(d_h_prev, d_c_prev)``."""
    spec = config.vqc_spec
    hidden = _hidden_vqc(config)
    d_th_h, d_z = shift_grad_batch(spec, params[hidden], cache["z"], d_h, cache["flips_h"])
    grads[hidden] += d_th_h.sum(axis=0)

    f, i, g, o, tc = cache["f"], cache["i"], cache["g"], cache["o"], cache["tc"]
    d_o = d_z * tc
    d_c = d_c + d_z * o * (1.0 - tc * tc)
    d_f, d_i, d_g, d_c_prev = cell_update_backward(d_c, f, i, g, cache["c_prev"])
    d_q = np.stack([d_f * f * (1 - f), d_i * i * (1 - i), d_g * (1 - g * g), d_o * o * (1 - o)])

    gate_thetas = np.stack([params[name] for name in GATE_VQCS])[:, None]
    d_th_g, d_u = shift_grad_batch(spec, gate_thetas, cache["u"][None], d_q, cache["flips_g"])
    d_th_g = d_th_g.sum(axis=1)
    for k, name in enumerate(GATE_VQCS):
        grads[name] += d_th_g[k]
    d_u = d_u.sum(axis=0)
    return _projection_backward(params, config, cache, d_u, grads), d_c_prev


def lstm_cell_forward(params, config: QlstmConfig, x_chunk, prev: CellState,
                      noise=None, sample_ids=None):
    x_chunk = np.atleast_2d(np.asarray(x_chunk, dtype=float))
    _check_step(config, x_chunk, prev)
    v = make_vt(x_chunk, prev.h)
    u = v @ params["w_in"] + params["b_in"]
    f = sigmoid(u @ params["w_forget"] + params["b_forget"])
    i = sigmoid(u @ params["w_input"] + params["b_input"])
    g = np.tanh(u @ params["w_candidate"] + params["b_candidate"])
    o = sigmoid(u @ params["w_output"] + params["b_output"])
    c = cell_update(f, i, g, prev.c)
    tc = np.tanh(c)
    h = o * tc
    cache = dict(v=v, u=u, f=f, i=i, g=g, o=o, c_prev=prev.c, c=c, tc=tc)
    return CellState(c=c, h=h), cache


def lstm_cell_backward(params, config: QlstmConfig, cache, d_h, d_c, grads):
    f, i, g, o, tc, u = cache["f"], cache["i"], cache["g"], cache["o"], cache["tc"], cache["u"]
    d_o = d_h * tc
    d_c = d_c + d_h * o * (1.0 - tc * tc)
    d_f, d_i, d_g, d_c_prev = cell_update_backward(d_c, f, i, g, cache["c_prev"])
    pre = {
        "forget": d_f * f * (1 - f),
        "input": d_i * i * (1 - i),
        "candidate": d_g * (1 - g * g),
        "output": d_o * o * (1 - o),
    }
    d_u = np.zeros_like(u)
    for gate, d_z in pre.items():
        grads[f"w_{gate}"] += u.T @ d_z
        grads[f"b_{gate}"] += d_z.sum(axis=0)
        d_u += d_z @ params[f"w_{gate}"].T
    return _projection_backward(params, config, cache, d_u, grads), d_c_prev


def _projection_backward(params, config, cache, d_u, grads):
    grads["w_in"] += cache["v"].T @ d_u
    grads["b_in"] += d_u.sum(axis=0)
    d_v = d_u @ params["w_in"].T
    return d_v[:, config.chunk_dim:]


_CELLS = {
    "qlstm": (qlstm_cell_forward, qlstm_cell_backward),
    "lstm": (lstm_cell_forward, lstm_cell_backward),
}


# -- sequences ----------------------------------------------------------------

@dataclass
class SequenceCache:
    kind: str
    config: QlstmConfig
    steps: list[dict] = field(default_factory=list)
    h_last: np.ndarray | None = None
    squeeze: bool = False


def sequence_forward(kind: str, params, config: QlstmConfig, fingerprints,
                     noise=None, sample_ids=None):
    """Logits for one fingerprint ``(fp_bits,)`` or a batch ``(B, fp_bits)``."""
    if kind not in _CELLS:
        raise ConfigError(f"model must be one of {MODEL_KINDS}, got {kind!r}")
    X = np.asarray(fingerprints, dtype=float)
    squeeze = X.ndim == 1
    X = np.atleast_2d(X)
    if X.ndim != 2 or X.shape[1] != config.fp_bits:
        raise UsageError(f"fingerprints must have {config.fp_bits} bits, got shape {X.shape}")
    if noise is not None:
        if kind != "qlstm":
            raise UsageError("noise only applies to the quantum model")
        sample_ids = np.arange(X.shape[0]) if sample_ids is None else np.asarray(sample_ids)
        if sample_ids.shape != (X.shape[0],):
            raise UsageError("sample_ids must give one id per fingerprint")

    cell_forward, _ = _CELLS[kind]
    state = zero_state(config, X.shape[0])
    cache = SequenceCache(kind=kind, config=config, squeeze=squeeze)
    chunks = X.reshape(X.shape[0], config.seq_len, config.chunk_dim)
    for t in range(config.seq_len):
        state, step = cell_forward(params, config, chunks[:, t], state, noise, sample_ids)
        cache.steps.append(step)
    cache.h_last = state.h
    logits = state.h @ params["w_out"] + params["b_out"]
    return (logits[0] if squeeze else logits), cache


def sequence_backward(params, cache: SequenceCache, d_logits) -> dict[str, np.ndarray]:
    """Backpropagation through time; returns gradients keyed like ``params``."""
    config = cache.config
    d_logits = np.asarray(d_logits, dtype=float)
    if cache.squeeze:
        d_logits = d_logits[None]
    if cache.h_last is None or d_logits.shape != (cache.h_last.shape[0], config.n_tasks):
        raise UsageError("d_logits does not match the cached forward pass")
    check_params(cache.kind, config, params)

    grads = {name: np.zeros_like(value, dtype=float) for name, value in params.items()}
    grads["w_out"] += cache.h_last.T @ d_logits
    grads["b_out"] += d_logits.sum(axis=0)
    d_h = d_logits @ params["w_out"].T
    d_c = np.zeros_like(d_h)
    _, cell_backward = _CELLS[cache.kind]
    for step in reversed(cache.steps):
        d_h, d_c = cell_backward(params, config, step, d_h, d_c, grads)
    return grads


def qlstm_backward(params, cache: SequenceCache, d_logits):
    if cache.kind != "qlstm":
        raise UsageError(f"cache is from a {cache.kind} forward pass")
    return sequence_backward(params, cache, d_logits)


def lstm_backward(params, cache: SequenceCache, d_logits):
    if cache.kind != "lstm":
        raise UsageError(f"cache is from a {cache.kind} forward pass")
    return sequence_backward(params, cache, d_logits)
