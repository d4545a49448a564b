"""A small SMILES parser covering the organic subset, bracket atoms, ring
closures, branches, and aromatic lowercase notation.

The output is a plain molecular graph (atoms + bonds with orders); no
sanitization, kekulization, or stereochemistry beyond parsing the symbols.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

ORGANIC_SUBSET = {"B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I"}
AROMATIC_ELEMENTS = {"b", "c", "n", "o", "p", "s"}

# default valences used for implicit hydrogen counting; multi-valent elements
# list alternatives in increasing order
DEFAULT_VALENCES = {
    "B": (3,), "C": (4,), "N": (3,), "O": (2,), "P": (3, 5), "S": (2, 4, 6),
    "F": (1,), "Cl": (1,), "Br": (1,), "I": (1,),
}

ATOMIC_NUMBERS = {
    "H": 1, "B": 5, "C": 6, "N": 7, "O": 8, "F": 9, "Si": 14, "P": 15,
    "S": 16, "Cl": 17, "Br": 35, "I": 53,
}

AROMATIC_BOND = 1.5


class SmilesError(ValueError):
    """Raised for strings this parser cannot interpret."""


@dataclass
class Atom:
    element: str
    aromatic: bool = False
    charge: int = 0
    explicit_h: int | None = None     # set only by bracket atoms
    isotope: int | None = None

    @property
    def atomic_number(self) -> int:
        try:
            return ATOMIC_NUMBERS[self.element]
        except KeyError:
            raise SmilesError(f"unsupported element {self.element!r}")


@dataclass
class Bond:
    i: int
    j: int
    order: float                      # 1, 2, 3, or 1.5 for aromatic


@dataclass
class Molecule:
    atoms: list[Atom] = field(default_factory=list)
    bonds: list[Bond] = field(default_factory=list)

    @property
    def num_atoms(self) -> int:
        return len(self.atoms)

    def neighbors(self, i: int) -> list[int]:
        out = []
        for b in self.bonds:
            if b.i == i:
                out.append(b.j)
            elif b.j == i:
                out.append(b.i)
        return out

    def bond_order_sum(self, i: int) -> float:
        return sum(b.order for b in self.bonds if i in (b.i, b.j))

    def implicit_hydrogens(self, i: int) -> int:
        """Hydrogens implied by the default valence of the element."""
        atom = self.atoms[i]
        if atom.explicit_h is not None:
            return atom.explicit_h
        valences = DEFAULT_VALENCES.get(atom.element)
        if valences is None:
            return 0
        used = math.ceil(self.bond_order_sum(i))
        for v in valences:
            if used <= v:
                return v - used
        return 0


BOND_SYMBOLS = {"-": 1.0, "=": 2.0, "#": 3.0, ":": AROMATIC_BOND,
                "/": 1.0, "\\": 1.0}


def _read_bracket_atom(text: str, pos: int) -> tuple[Atom, int]:
    """Parse `[...]` starting at the `[`; returns (atom, index past `]`)."""
    end = text.find("]", pos)
    if end < 0:
        raise SmilesError(f"unclosed bracket at position {pos}")
    body = text[pos + 1:end]
    k = 0
    isotope = None
    while k < len(body) and body[k].isdigit():
        k += 1
    if k:
        isotope = int(body[:k])
    if k >= len(body):
        raise SmilesError(f"bracket atom missing element: [{body}]")
    if k + 1 < len(body) and body[k:k + 2] in ("Cl", "Br", "Si"):
        element, aromatic = body[k:k + 2], False
        k += 2
    else:
        ch = body[k]
        aromatic = ch.islower()
        element = ch.upper() if ch != "H" else "H"
        k += 1
    explicit_h = 0
    charge = 0
    while k < len(body):
        ch = body[k]
        if ch == "H":
            k += 1
            count = 0
            while k < len(body) and body[k].isdigit():
                count = count * 10 + int(body[k])
                k += 1
            explicit_h = count if count else 1
        elif ch in "+-":
            sign = 1 if ch == "+" else -1
            k += 1
            if k < len(body) and body[k].isdigit():
                charge = sign * int(body[k])
                k += 1
            else:
                charge = sign
                while k < len(body) and body[k] == ch:
                    charge += sign
                    k += 1
        elif ch == "@":                # chirality parsed and discarded
            k += 1
            if k < len(body) and body[k] == "@":
                k += 1
        else:
            raise SmilesError(f"unsupported bracket token {ch!r} in [{body}]")
    return Atom(element, aromatic, charge, explicit_h, isotope), end + 1


def parse_smiles(text: str) -> Molecule:
    """Parse a SMILES string into a molecular graph of heavy atoms.

    Bracket hydrogens are recorded as explicit hydrogen counts on their heavy
    atom rather than as graph nodes.
    """
    text = text.strip()
    if not text:
        raise SmilesError("empty SMILES string")
    mol = Molecule()
    prev: int | None = None
    pending_bond: float | None = None
    branch_stack: list[int | None] = []
    ring_bonds: dict[int, tuple[int, float | None]] = {}
    pos = 0

    def add_atom(atom: Atom) -> None:
        nonlocal prev, pending_bond
        idx = mol.num_atoms
        if atom.element == "H":
            raise SmilesError("explicit hydrogen atoms are not supported "
                              "outside bracket H counts")
        mol.atoms.append(atom)
        if prev is not None:
            order = pending_bond
            if order is None:
                order = AROMATIC_BOND if (atom.aromatic and
                                          mol.atoms[prev].aromatic) else 1.0
            mol.bonds.append(Bond(prev, idx, order))
        prev = idx
        pending_bond = None

    def close_ring(number: int) -> None:
        nonlocal pending_bond
        if prev is None:
            raise SmilesError("ring closure before any atom")
        if number in ring_bonds:
            other, opened_order = ring_bonds.pop(number)
            order = pending_bond if pending_bond is not None else opened_order
            if order is None:
                order = AROMATIC_BOND if (mol.atoms[other].aromatic and
                                          mol.atoms[prev].aromatic) else 1.0
            if other == prev:
                raise SmilesError(f"ring bond {number} closes onto itself")
            mol.bonds.append(Bond(other, prev, order))
        else:
            ring_bonds[number] = (prev, pending_bond)
        pending_bond = None

    while pos < len(text):
        ch = text[pos]
        if ch == "[":
            atom, pos = _read_bracket_atom(text, pos)
            add_atom(atom)
        elif text[pos:pos + 2] in ("Cl", "Br"):
            add_atom(Atom(text[pos:pos + 2]))
            pos += 2
        elif ch in ORGANIC_SUBSET:
            add_atom(Atom(ch))
            pos += 1
        elif ch in AROMATIC_ELEMENTS:
            add_atom(Atom(ch.upper(), aromatic=True))
            pos += 1
        elif ch in BOND_SYMBOLS:
            pending_bond = BOND_SYMBOLS[ch]
            pos += 1
        elif ch.isdigit():
            close_ring(int(ch))
            pos += 1
        elif ch == "%":
            if pos + 2 >= len(text) or not text[pos + 1:pos + 3].isdigit():
                raise SmilesError(f"bad ring number at position {pos}")
            close_ring(int(text[pos + 1:pos + 3]))
            pos += 3
        elif ch == "(":
            branch_stack.append(prev)
            pos += 1
        elif ch == ")":
            if not branch_stack:
                raise SmilesError(f"unmatched ')' at position {pos}")
            prev = branch_stack.pop()
            pos += 1
        elif ch == ".":
            prev = None
            pending_bond = None
            pos += 1
        else:
            raise SmilesError(f"unexpected character {ch!r} at position {pos}")
    if branch_stack:
        raise SmilesError("unclosed branch parenthesis")
    if ring_bonds:
        raise SmilesError(f"unclosed ring bonds: {sorted(ring_bonds)}")
    if not mol.atoms:
        raise SmilesError("no atoms parsed")
    for atom in mol.atoms:
        atom.atomic_number  # validates element support
    return mol


def ring_bond_flags(mol: Molecule) -> list[bool]:
    """True for each bond that lies on a cycle (i.e. is not a bridge)."""
    n = mol.num_atoms
    adjacency: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    for b_idx, b in enumerate(mol.bonds):
        adjacency[b.i].append((b.j, b_idx))
        adjacency[b.j].append((b.i, b_idx))
    visited = [False] * n
    entry = [0] * n
    low = [0] * n
    is_bridge = [False] * len(mol.bonds)
    timer = 0

    for root in range(n):
        if visited[root]:
            continue
        stack = [(root, -1, iter(adjacency[root]))]
        visited[root] = True
        entry[root] = low[root] = timer
        timer += 1
        while stack:
            node, parent_edge, it = stack[-1]
            advanced = False
            for nxt, b_idx in it:
                if b_idx == parent_edge:
                    continue
                if visited[nxt]:
                    low[node] = min(low[node], entry[nxt])
                else:
                    visited[nxt] = True
                    entry[nxt] = low[nxt] = timer
                    timer += 1
                    stack.append((nxt, b_idx, iter(adjacency[nxt])))
                    advanced = True
                    break
            if not advanced:
                stack.pop()
                if stack:
                    pnode = stack[-1][0]
                    low[pnode] = min(low[pnode], low[node])
                    if parent_edge >= 0 and low[node] > entry[pnode]:
                        is_bridge[parent_edge] = True
    # parallel bonds between the same pair are never bridges
    pair_counts: dict[tuple[int, int], int] = {}
    for b in mol.bonds:
        pair_counts[(min(b.i, b.j), max(b.i, b.j))] = \
            pair_counts.get((min(b.i, b.j), max(b.i, b.j)), 0) + 1
    return [not is_bridge[k] or
            pair_counts[(min(b.i, b.j), max(b.i, b.j))] > 1
            for k, b in enumerate(mol.bonds)]
