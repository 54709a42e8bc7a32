"""Morgan-style circular fingerprints.

Atom identifiers start from a hash of (element, heavy degree, H count,
charge, aromatic flag).  Each round replaces an atom's identifier with a hash
of the round number, the old identifier and the sorted list of
``(bond order, neighbour identifier)`` pairs, so the result does not depend on
atom numbering.  Every identifier from rounds ``0..radius`` sets bit
``identifier % n_bits``.

Hashing is BLAKE2b truncated to 64 bits over a fixed little-endian byte
encoding, which keeps fingerprints identical across runs and platforms.  Bits
are not meant to match any external toolkit.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .smiles import MoleculeGraph

DEFAULT_RADIUS = 6
DEFAULT_BITS = 1024


@dataclass
class Fingerprint:
    bits: np.ndarray
    radius: int

    @property
    def n_bits(self) -> int:
        return int(self.bits.shape[0])

    @property
    def n_set(self) -> int:
        return int(self.bits.sum())

    def to_string(self) -> str:
        return "".join("1" if b else "0" for b in self.bits)


def stable_hash(*fields: int | str) -> int:
    h = hashlib.blake2b(digest_size=8)
    for f in fields:
        if isinstance(f, str):
            raw = f.encode("utf-8")
            h.update(b"s" + struct.pack("<I", len(raw)) + raw)
        else:
            # 9 bytes covers both signed small ints and unsigned 64-bit codes
            h.update(b"i" + int(f).to_bytes(9, "little", signed=True))
    return int.from_bytes(h.digest(), "little")


def atom_invariants(mol: MoleculeGraph) -> list[int]:
    adj = mol.neighbors()
    return [
        stable_hash(atom.element, len(adj[k]), atom.h_count, atom.charge, int(atom.aromatic))
        for k, atom in enumerate(mol.atoms)
    ]


def atom_identifiers(mol: MoleculeGraph, radius: int) -> list[list[int]]:
    """Identifiers per round: ``result[r][k]`` for atom ``k`` after ``r`` rounds."""
    adj = mol.neighbors()
    codes = atom_invariants(mol)
    rounds = [codes]
    for r in range(1, radius + 1):
        prev = rounds[-1]
        new = []
        for k in range(len(mol.atoms)):
            env = sorted((int(order), prev[j]) for j, order in adj[k])
            flat = [x for pair in env for x in pair]
            new.append(stable_hash(r, prev[k], len(env), *flat))
        rounds.append(new)
    return rounds


def morgan_fingerprint(mol: MoleculeGraph, radius: int = DEFAULT_RADIUS,
                       n_bits: int = DEFAULT_BITS) -> Fingerprint:
    if radius < 0 or n_bits < 1:
        raise ValueError(f"bad fingerprint shape radius={radius} n_bits={n_bits}")
    mol.validate()
    bits = np.zeros(n_bits, dtype=np.uint8)
    for codes in atom_identifiers(mol, radius):
        for code in codes:
            bits[code % n_bits] = 1
    return Fingerprint(bits=bits, radius=radius)
