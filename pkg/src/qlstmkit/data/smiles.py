"""A small SMILES reader producing atom/bond graphs.

Supported: organic-subset atoms (B C N O P S F Cl Br I) and their aromatic
lowercase forms, bracket atoms with explicit H count and charge, bonds
``- = # :``, branches, ring closures (single digits and ``%nn``) and ``.``
component separators.  Stereo marks, isotopes, atom classes and wildcards are
rejected.  Aromaticity is taken from lowercase letters as written.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum

from ..errors import ParseError


class BondOrder(IntEnum):
    SINGLE = 1
    DOUBLE = 2
    TRIPLE = 3
    AROMATIC = 4

    @property
    def valence(self) -> float:
        return 1.5 if self is BondOrder.AROMATIC else float(self.value)


@dataclass
class Atom:
    element: str
    aromatic: bool = False
    charge: int = 0
    h_count: int = 0
    bracket: bool = False


@dataclass(frozen=True)
class Bond:
    a: int
    b: int
    order: BondOrder


@dataclass
class MoleculeGraph:
    atoms: list[Atom] = field(default_factory=list)
    bonds: list[Bond] = field(default_factory=list)

    def neighbors(self) -> list[list[tuple[int, BondOrder]]]:
        adj: list[list[tuple[int, BondOrder]]] = [[] for _ in self.atoms]
        for bond in self.bonds:
            adj[bond.a].append((bond.b, bond.order))
            adj[bond.b].append((bond.a, bond.order))
        return adj

    def degree(self, index: int) -> int:
        return sum(1 for b in self.bonds if index in (b.a, b.b))

    @property
    def n_hydrogens(self) -> int:
        return sum(a.h_count for a in self.atoms)

    def validate(self) -> None:
        if not self.atoms:
            raise ValueError("molecule has no atoms")
        seen = set()
        for bond in self.bonds:
            if bond.a == bond.b:
                raise ValueError(f"self-bond on atom {bond.a}")
            for end in (bond.a, bond.b):
                if not 0 <= end < len(self.atoms):
                    raise ValueError(f"bond endpoint {end} out of range")
            key = frozenset((bond.a, bond.b))
            if key in seen:
                raise ValueError(f"duplicate bond {sorted(key)}")
            seen.add(key)


ORGANIC = ("Cl", "Br", "B", "C", "N", "O", "P", "S", "F", "I")
AROMATIC_ORGANIC = ("b", "c", "n", "o", "p", "s")
AROMATIC_BRACKET = ("se", "as", "te", "b", "c", "n", "o", "p", "s")

DEFAULT_VALENCES = {
    "B": (3,), "C": (4,), "N": (3, 5), "O": (2,), "P": (3, 5), "S": (2, 4, 6),
    "F": (1,), "Cl": (1,), "Br": (1,), "I": (1,),
}

ELEMENTS = frozenset("""
H He Li Be B C N O F Ne Na Mg Al Si P S Cl Ar K Ca Sc Ti V Cr Mn Fe Co Ni Cu
Zn Ga Ge As Se Br Kr Rb Sr Y Zr Nb Mo Tc Ru Rh Pd Ag Cd In Sn Sb Te I Xe Cs Ba
La Ce Pr Nd Pm Sm Eu Gd Tb Dy Ho Er Tm Yb Lu Hf Ta W Re Os Ir Pt Au Hg Tl Pb
Bi Po At Rn Fr Ra Ac Th Pa U Np Pu Am Cm Bk Cf Es Fm Md No Lr
""".split())

_BOND_SYMBOLS = {"-": BondOrder.SINGLE, "=": BondOrder.DOUBLE, "#": BondOrder.TRIPLE,
                 ":": BondOrder.AROMATIC}
_UNSUPPORTED = {
    "/": "directional bond (stereo)", "\\": "directional bond (stereo)",
    "@": "chirality", "*": "wildcard atom", "$": "quadruple bond",
}


def implicit_hydrogens(element: str, bond_valence: float, aromatic: bool = False) -> int:
    """H count from the lowest standard valence that accommodates the bonds.

    For aromatic atoms ``bond_valence`` counts each aromatic bond as 1 and one
    more valence unit goes to the aromatic system.
    """
    for valence in DEFAULT_VALENCES.get(element, ()):
        if valence >= bond_valence - 1e-9:
            free = valence - bond_valence - (1 if aromatic else 0)
            return max(int(math.floor(free + 1e-9)), 0)
    return 0


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        self.mol = MoleculeGraph()
        self.bond_keys: set[frozenset[int]] = set()

    def error(self, message: str, pos: int | None = None) -> ParseError:
        return ParseError(message, position=(self.pos if pos is None else pos) + 1)

    def parse(self) -> MoleculeGraph:
        text = self.text
        prev: int | None = None
        pending: BondOrder | None = None
        pending_pos = 0
        branches: list[tuple[int | None, int]] = []
        rings: dict[int, tuple[int, BondOrder | None, int]] = {}

        while self.pos < len(text):
            ch = text[self.pos]
            start = self.pos
            if ch in _UNSUPPORTED:
                raise self.error(f"unsupported {_UNSUPPORTED[ch]} {ch!r}")
            if ch == "(":
                if prev is None:
                    raise self.error("branch opens before any atom")
                branches.append((prev, start))
                self.pos += 1
                continue
            if ch == ")":
                if not branches:
                    raise self.error("unmatched ')'")
                if pending is not None:
                    raise self.error("bond symbol before ')'")
                prev, _ = branches.pop()
                self.pos += 1
                continue
            if ch in _BOND_SYMBOLS:
                if pending is not None:
                    raise self.error("two bond symbols in a row")
                if prev is None:
                    raise self.error("bond symbol before any atom")
                pending, pending_pos = _BOND_SYMBOLS[ch], start
                self.pos += 1
                continue
            if ch == ".":
                if pending is not None:
                    raise self.error("bond symbol before '.'")
                prev = None
                self.pos += 1
                continue
            if ch.isdigit() or ch == "%":
                if prev is None:
                    raise self.error("ring closure before any atom")
                number = self._ring_number()
                if number in rings:
                    other, other_order, other_pos = rings.pop(number)
                    if pending is not None and other_order is not None and pending != other_order:
                        raise self.error(f"conflicting bond orders on ring closure {number}")
                    order = pending or other_order
                    self._bond(other, prev, order, start)
                else:
                    rings[number] = (prev, pending, start)
                pending = None
                continue

            atom_index = self._atom()
            if prev is not None:
                self._bond(prev, atom_index, pending, start)
            elif pending is not None:
                raise self.error("bond symbol without a preceding atom", pending_pos)
            pending = None
            prev = atom_index

        if pending is not None:
            raise self.error("dangling bond symbol at end of input", pending_pos)
        if branches:
            raise self.error("unclosed branch '('", branches[-1][1])
        if rings:
            number, (_, _, pos) = next(iter(rings.items()))
            raise self.error(f"unmatched ring bond {number}", pos)
        if not self.mol.atoms:
            raise self.error("no atoms")
        self._fill_hydrogens()
        return self.mol

    def _ring_number(self) -> int:
        text = self.text
        if text[self.pos] == "%":
            digits = text[self.pos + 1:self.pos + 3]
            if len(digits) != 2 or not digits.isdigit():
                raise self.error("'%' must be followed by two digits")
            self.pos += 3
            return int(digits)
        self.pos += 1
        return int(text[self.pos - 1])

    def _bond(self, a: int, b: int, order: BondOrder | None, pos: int) -> None:
        if a == b:
            raise self.error("atom bonded to itself", pos)
        key = frozenset((a, b))
        if key in self.bond_keys:
            raise self.error("duplicate bond between the same atoms", pos)
        if order is None:
            both_aromatic = self.mol.atoms[a].aromatic and self.mol.atoms[b].aromatic
            order = BondOrder.AROMATIC if both_aromatic else BondOrder.SINGLE
        self.bond_keys.add(key)
        self.mol.bonds.append(Bond(a, b, order))

    def _atom(self) -> int:
        text = self.text
        if text[self.pos] == "[":
            return self._bracket_atom()
        for symbol in ORGANIC:
            if text.startswith(symbol, self.pos):
                self.pos += len(symbol)
                self.mol.atoms.append(Atom(symbol))
                return len(self.mol.atoms) - 1
        ch = text[self.pos]
        if ch in AROMATIC_ORGANIC:
            self.pos += 1
            self.mol.atoms.append(Atom(ch.upper(), aromatic=True))
            return len(self.mol.atoms) - 1
        raise self.error(f"unsupported token {ch!r}")

    def _bracket_atom(self) -> int:
        text = self.text
        open_pos = self.pos
        close = text.find("]", open_pos)
        if close < 0:
            raise self.error("unclosed bracket atom", open_pos)
        body = text[open_pos + 1:close]
        i = 0
        if body[:1].isdigit():
            raise self.error("isotopes are not supported", open_pos + 1)
        element, aromatic = None, False
        for sym in AROMATIC_BRACKET:
            if body.startswith(sym):
                element, aromatic = sym.capitalize(), True
                i = len(sym)
                break
        if element is None:
            if len(body) >= 2 and body[:2] in ELEMENTS and body[1].islower():
                element, i = body[:2], 2
            elif body[:1] in ELEMENTS:
                element, i = body[:1], 1
            else:
                raise self.error(f"unknown element in [{body}]", open_pos + 1)
        if body[i:i + 1] == "@":
            raise self.error("unsupported chirality '@'", open_pos + 1 + i)
        h_count = 0
        if body[i:i + 1] == "H":
            i += 1
            digits = ""
            while i < len(body) and body[i].isdigit():
                digits += body[i]
                i += 1
            h_count = int(digits) if digits else 1
        charge = 0
        if i < len(body) and body[i] in "+-":
            sign = 1 if body[i] == "+" else -1
            symbol = body[i]
            i += 1
            digits = ""
            while i < len(body) and body[i].isdigit():
                digits += body[i]
                i += 1
            if digits:
                charge = sign * int(digits)
            else:
                count = 1
                while i < len(body) and body[i] == symbol:
                    count += 1
                    i += 1
                charge = sign * count
        if i != len(body):
            raise self.error(f"unsupported bracket atom content {body[i:]!r}", open_pos + 1 + i)
        self.pos = close + 1
        self.mol.atoms.append(Atom(element, aromatic, charge, h_count, bracket=True))
        return len(self.mol.atoms) - 1

    def _fill_hydrogens(self) -> None:
        counted = [0.0] * len(self.mol.atoms)
        for bond in self.mol.bonds:
            for end, other in ((bond.a, bond.b), (bond.b, bond.a)):
                both_aromatic = self.mol.atoms[end].aromatic and self.mol.atoms[other].aromatic
                if bond.order is BondOrder.AROMATIC and both_aromatic:
                    counted[end] += 1.0
                else:
                    counted[end] += bond.order.valence
        for atom, total in zip(self.mol.atoms, counted):
            if not atom.bracket:
                atom.h_count = implicit_hydrogens(atom.element, total, atom.aromatic)


def parse_smiles(text: str) -> MoleculeGraph:
    if not isinstance(text, str) or not text.strip():
        raise ParseError("empty SMILES string", position=1)
    return _Parser(text.strip()).parse()
