"""Quantum LSTM toolkit: statevector simulator, VQC layers, QLSTM/LSTM models,
bit-flip noise and gate-error scoring for molecular property classification."""

__version__ = "0.1.0"
