"""Relational training data: the global example, fragments, standardized
local examples, and the width-k marginal sampling process.

Data files are UTF-8, one ground atom per line, `#` comments, and an
optional `@constants c1 c2 ...` header for individuals that occur in no
atom.
"""

from __future__ import annotations

import itertools
import math
from fractions import Fraction

from .errors import DomainError, ParseError, SignatureError, SizeError
from .logic import (
    Atom,
    Constant,
    constant_key,
    isomorphic,
    parse_ground_atom,
)

_LOCAL_CLASS_WIDTH_CAP = 8


def canonical_constants(k: int):
    return tuple(Constant(str(i)) for i in range(1, k + 1))


def _check_signature(predicates):
    by_name = {}
    for p in predicates:
        if by_name.setdefault(p.name, p.arity) != p.arity:
            raise SignatureError(
                f"predicate {p.name} used with arities "
                f"{by_name[p.name]} and {p.arity}"
            )


class GlobalExample:
    """The training database: a set of ground atoms over a constant set.

    Constants may include isolated individuals that occur in no atom; they
    still participate in fragment sampling.
    """

    __slots__ = ("atoms", "constants", "signature", "_hash")

    def __init__(self, atoms, constants=None, signature=None):
        atoms = frozenset(atoms)
        occurring = set()
        preds = set()
        for atom in atoms:
            if not atom.is_ground:
                raise DomainError(f"non-ground atom {atom} in example")
            occurring.update(atom.args)
            preds.add(atom.predicate)
        consts = set(occurring)
        if constants is not None:
            consts.update(constants)
        if not occurring <= consts:
            raise DomainError("atom constants outside the declared constant set")
        if signature is not None:
            preds.update(signature)
        _check_signature(preds)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "constants", frozenset(consts))
        object.__setattr__(self, "signature", frozenset(preds))
        object.__setattr__(self, "_hash", hash((atoms, self.constants)))

    def __setattr__(self, *a):
        raise AttributeError("GlobalExample is immutable")

    def __eq__(self, other):
        return (
            isinstance(other, GlobalExample)
            and self.atoms == other.atoms
            and self.constants == other.constants
        )

    def __hash__(self):
        return self._hash

    def sorted_constants(self):
        return sorted(self.constants, key=constant_key)

    def __repr__(self):
        return f"GlobalExample({len(self.atoms)} atoms, {len(self.constants)} constants)"


class LocalExample:
    """A possible world of width k over the canonical constants 1..k."""

    __slots__ = ("atoms", "width", "_hash")

    def __init__(self, atoms, width):
        atoms = frozenset(atoms)
        allowed = set(canonical_constants(width))
        for atom in atoms:
            if not atom.is_ground or not set(atom.args) <= allowed:
                raise DomainError(
                    f"atom {atom} outside canonical constants 1..{width}"
                )
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "width", width)
        object.__setattr__(self, "_hash", hash((atoms, width)))

    def __setattr__(self, *a):
        raise AttributeError("LocalExample is immutable")

    @property
    def constants(self):
        return frozenset(canonical_constants(self.width))

    def __eq__(self, other):
        return (
            isinstance(other, LocalExample)
            and self.atoms == other.atoms
            and self.width == other.width
        )

    def __hash__(self):
        return self._hash

    def canonical_text(self):
        return ";".join(sorted(str(a) for a in self.atoms))

    def __repr__(self):
        return f"LocalExample(width={self.width}, {{{self.canonical_text()}}})"


class Fragment:
    """Restriction of a global example to a constant subset."""

    __slots__ = ("atoms", "subset")

    def __init__(self, atoms, subset):
        object.__setattr__(self, "atoms", frozenset(atoms))
        object.__setattr__(self, "subset", frozenset(subset))

    def __setattr__(self, *a):
        raise AttributeError("Fragment is immutable")

    @property
    def constants(self):
        return self.subset

    def __eq__(self, other):
        return (
            isinstance(other, Fragment)
            and self.atoms == other.atoms
            and self.subset == other.subset
        )

    def __hash__(self):
        return hash((self.atoms, self.subset))

    def __repr__(self):
        return f"Fragment({len(self.atoms)} atoms over {len(self.subset)} constants)"


# ---------------------------------------------------------------------------
# Parsing / writing


def parse_example(text, declared_constants=None) -> GlobalExample:
    """Parse a data file into a global example; the constant set is the
    union of constants occurring in atoms, `@constants` headers and
    ``declared_constants``."""
    atoms = []
    consts = set(Constant(c) for c in (declared_constants or ()))
    arities = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("@constants"):
            names = line[len("@constants"):].split()
            if not names:
                raise ParseError("@constants header without names", line=lineno)
            consts.update(Constant(n) for n in names)
            continue
        atom = parse_ground_atom(line, line=lineno)
        prev = arities.setdefault(atom.predicate.name, atom.predicate.arity)
        if prev != atom.predicate.arity:
            raise SignatureError(
                f"predicate {atom.predicate.name} used with arities "
                f"{prev} and {atom.predicate.arity}",
                line=lineno,
            )
        atoms.append(atom)
    return GlobalExample(atoms, constants=consts)


def format_example(example: GlobalExample) -> str:
    lines = []
    isolated = sorted(
        (c for c in example.constants
         if not any(c in a.args for a in example.atoms)),
        key=constant_key,
    )
    if isolated:
        lines.append("@constants " + " ".join(c.name for c in isolated))
    lines.extend(sorted(str(a) for a in example.atoms))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Fragments and local examples


def fragment(example: GlobalExample, subset) -> Fragment:
    """Exact restriction of the example to ``subset``."""
    subset = frozenset(subset)
    if not subset <= example.constants:
        raise DomainError("subset contains constants outside the example")
    atoms = {a for a in example.atoms if set(a.args) <= subset}
    return Fragment(atoms, subset)


def local_class(example: GlobalExample, subset) -> frozenset:
    """All width-|subset| local examples isomorphic to the fragment."""
    frag = fragment(example, subset)
    k = len(frag.subset)
    if k > _LOCAL_CLASS_WIDTH_CAP:
        raise SizeError(
            f"local_class width {k} exceeds the exact cap {_LOCAL_CLASS_WIDTH_CAP}"
        )
    return standardize(frag.atoms, frag.subset)


def standardize(atoms, subset) -> frozenset:
    """Every canonical-constant image of ``atoms`` under bijections of
    ``subset`` onto 1..k, deduplicated by atom set."""
    members = set()
    source = sorted(subset, key=constant_key)
    k = len(source)
    targets = canonical_constants(k)
    for perm in itertools.permutations(targets):
        mapping = dict(zip(source, perm))
        image = frozenset(
            Atom(a.predicate, tuple(mapping[x] for x in a.args)) for a in atoms
        )
        members.add(LocalExample(image, k))
    return frozenset(members)


def sample_marginal(example: GlobalExample, k: int, rng) -> LocalExample:
    """One draw from the width-k relational marginal distribution: a
    uniform k-subset, then a uniform member of its isomorphism class."""
    if not 1 <= k <= len(example.constants):
        raise DomainError(f"width {k} out of range 1..{len(example.constants)}")
    subset = rng.sample(example.sorted_constants(), k)
    members = sorted(local_class(example, subset), key=LocalExample.canonical_text)
    return rng.choice(members)


def marginal_distribution(example: GlobalExample, k: int) -> dict:
    """Exact width-k marginal by exhaustive subset/class enumeration.

    Returns {LocalExample: Fraction}; probabilities sum to one.
    """
    if not 1 <= k <= len(example.constants):
        raise DomainError(f"width {k} out of range 1..{len(example.constants)}")
    consts = example.sorted_constants()
    total = math.comb(len(consts), k)
    dist = {}
    for subset in itertools.combinations(consts, k):
        members = local_class(example, subset)
        share = Fraction(1, total * len(members))
        for member in members:
            dist[member] = dist.get(member, Fraction(0)) + share
    return dist
