"""Function-free first-order syntax and the operations the rest of the
pipeline builds on: grounding, isomorphism of ground structures, a
Weisfeiler-Lehman style invariant hash, and theta-subsumption.

Variables and constants are distinct term types; formula text distinguishes
them by case (uppercase-initial tokens are variables), data files contain
only constants.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field
from hashlib import blake2b

from .errors import DomainError, ParseError


@dataclass(frozen=True, order=True)
class Variable:
    name: str

    def __str__(self):
        return self.name


@dataclass(frozen=True, order=True)
class Constant:
    name: str

    def __str__(self):
        return self.name


# Deterministic constant order: numeric-looking names sort naturally.
def constant_key(c: Constant):
    return (len(c.name), c.name)


@dataclass(frozen=True, order=True)
class Predicate:
    name: str
    arity: int

    def __post_init__(self):
        if not self.name:
            raise ValueError("predicate name must be non-empty")
        if self.arity < 0:
            raise ValueError("predicate arity must be non-negative")

    def __str__(self):
        return f"{self.name}/{self.arity}"


@dataclass(frozen=True)
class Atom:
    predicate: Predicate
    args: tuple

    def __post_init__(self):
        if len(self.args) != self.predicate.arity:
            raise ValueError(
                f"{self.predicate} applied to {len(self.args)} arguments"
            )

    def variables(self):
        seen = []
        for a in self.args:
            if isinstance(a, Variable) and a not in seen:
                seen.append(a)
        return tuple(seen)

    def constants(self):
        return tuple(a for a in self.args if isinstance(a, Constant))

    @property
    def is_ground(self):
        return all(isinstance(a, Constant) for a in self.args)

    def substitute(self, subst) -> "Atom":
        return Atom(self.predicate, tuple(subst.get(a, a) for a in self.args))

    def __str__(self):
        return f"{self.predicate.name}({','.join(str(a) for a in self.args)})"


@dataclass(frozen=True)
class Literal:
    atom: Atom
    positive: bool = True

    def negate(self) -> "Literal":
        return Literal(self.atom, not self.positive)

    def substitute(self, subst) -> "Literal":
        return Literal(self.atom.substitute(subst), self.positive)

    def __str__(self):
        return ("" if self.positive else "!") + str(self.atom)


class Clause:
    """Disjunction of literals, variables implicitly universally quantified.

    ``alldiff`` restricts the quantification to substitutions mapping the
    clause's variables to pairwise-distinct constants.  The flag is
    normalized to False for clauses with fewer than two variables, where it
    is vacuous.  The empty clause is falsum.
    """

    __slots__ = ("literals", "alldiff", "_vars", "_hash", "_canon")

    def __init__(self, literals, alldiff=True):
        lits = frozenset(literals)
        object.__setattr__(self, "literals", lits)
        variables = []
        for lit in sorted(lits, key=str):
            for v in lit.atom.variables():
                if v not in variables:
                    variables.append(v)
        object.__setattr__(self, "_vars", tuple(variables))
        object.__setattr__(self, "alldiff", bool(alldiff) and len(variables) >= 2)
        object.__setattr__(self, "_hash", hash((lits, self.alldiff)))
        object.__setattr__(self, "_canon", None)

    def __setattr__(self, *a):
        raise AttributeError("Clause is immutable")

    def variables(self):
        return self._vars

    def __len__(self):
        return len(self.literals)

    def __eq__(self, other):
        return (
            isinstance(other, Clause)
            and self.literals == other.literals
            and self.alldiff == other.alldiff
        )

    def __hash__(self):
        return self._hash

    @property
    def is_bottom(self):
        return not self.literals

    def is_tautology(self):
        atoms = {lit.atom for lit in self.literals if lit.positive}
        return any(not lit.positive and lit.atom in atoms for lit in self.literals)

    def substitute(self, subst) -> "Clause":
        return Clause(
            (lit.substitute(subst) for lit in self.literals), self.alldiff
        )

    def canonical_form(self) -> str:
        """Renaming-invariant text form: minimum over variable renamings."""
        if self._canon is None:
            object.__setattr__(self, "_canon", _canonical_clause_text(self))
        return self._canon

    def rename_canonically(self) -> "Clause":
        """The isomorphic clause whose variables are V1..Vn in canonical order."""
        return parse_clause(self.canonical_form())

    def __str__(self):
        if self.is_bottom:
            return BOTTOM_TOKEN
        body = " v ".join(sorted(str(lit) for lit in self.literals))
        if len(self._vars) >= 2 and not self.alldiff:
            body += " @nodiff"
        return body

    def __repr__(self):
        return f"Clause({self})"


BOTTOM_TOKEN = "_bot_"
BOTTOM = Clause((), alldiff=False)


class HornRule:
    """One positive head atom with a conjunctive positive body."""

    __slots__ = ("head", "body", "alldiff", "_hash")

    def __init__(self, head: Atom, body=(), alldiff=True):
        object.__setattr__(self, "head", head)
        object.__setattr__(self, "body", frozenset(body))
        object.__setattr__(self, "alldiff", bool(alldiff))
        object.__setattr__(self, "_hash", hash((head, self.body, self.alldiff)))

    def __setattr__(self, *a):
        raise AttributeError("HornRule is immutable")

    def variables(self):
        return self.to_clause().variables()

    def to_clause(self) -> Clause:
        lits = [Literal(self.head, True)]
        lits.extend(Literal(b, False) for b in self.body)
        return Clause(lits, self.alldiff)

    def substitute(self, subst) -> "HornRule":
        return HornRule(
            self.head.substitute(subst),
            (b.substitute(subst) for b in self.body),
            self.alldiff,
        )

    def __eq__(self, other):
        return (
            isinstance(other, HornRule)
            and self.head == other.head
            and self.body == other.body
            and self.alldiff == other.alldiff
        )

    def __hash__(self):
        return self._hash

    def __str__(self):
        if not self.body:
            return f"{self.head} <- true"
        return f"{self.head} <- " + " ^ ".join(sorted(str(b) for b in self.body))

    def __repr__(self):
        return f"HornRule({self})"


def _canonical_clause_text(clause: Clause) -> str:
    variables = clause.variables()
    if not variables:
        return str(clause)
    best = None
    for perm in itertools.permutations(range(1, len(variables) + 1)):
        subst = {v: Variable(f"V{i}") for v, i in zip(variables, perm)}
        lits = sorted(str(lit.substitute(subst)) for lit in clause.literals)
        text = " v ".join(lits)
        if best is None or text < best:
            best = text
    if len(variables) >= 2 and not clause.alldiff:
        best += " @nodiff"
    return best


def clause_sort_key(clause: Clause):
    return (len(clause.literals), len(clause.variables()), clause.canonical_form())


# ---------------------------------------------------------------------------
# Grounding


def ground(formula, constants):
    """All ground instances of a clause or Horn rule over ``constants``.

    With ``alldiff`` set, only substitutions with pairwise-distinct images
    are emitted.  A formula with more variables than there are constants
    grounds to the empty set under alldiff.
    """
    variables = formula.variables()
    pool = sorted(constants, key=constant_key)
    out = set()
    if formula.alldiff and len(variables) >= 2:
        assignments = itertools.permutations(pool, len(variables))
    else:
        assignments = itertools.product(pool, repeat=len(variables))
    for values in assignments:
        out.add(formula.substitute(dict(zip(variables, values))))
    return out


# ---------------------------------------------------------------------------
# Isomorphism of ground structures


def _structure(example):
    """(atom frozenset, constant frozenset) of a local or global example."""
    return frozenset(example.atoms), frozenset(example.constants)


def _constant_profile(atoms, constants):
    prof = {c: [] for c in constants}
    for atom in atoms:
        for pos, arg in enumerate(atom.args):
            dup = len(set(atom.args)) < len(atom.args)
            prof[arg].append((atom.predicate.name, atom.predicate.arity, pos, dup))
    return {c: tuple(sorted(v)) for c, v in prof.items()}


def isomorphic(e1, e2) -> bool:
    """True iff a constant bijection maps e1's atom set exactly onto e2's."""
    atoms1, consts1 = _structure(e1)
    atoms2, consts2 = _structure(e2)
    if len(atoms1) != len(atoms2) or len(consts1) != len(consts2):
        return False
    sig1 = sorted((a.predicate, ) for a in atoms1)
    sig2 = sorted((a.predicate, ) for a in atoms2)
    if sig1 != sig2:
        return False
    prof1 = _constant_profile(atoms1, consts1)
    prof2 = _constant_profile(atoms2, consts2)
    if sorted(prof1.values()) != sorted(prof2.values()):
        return False

    order = sorted(consts1, key=lambda c: (prof1[c], constant_key(c)))
    candidates = {
        c: [d for d in consts2 if prof2[d] == prof1[c]] for c in order
    }

    def apply(mapping):
        return frozenset(
            Atom(a.predicate, tuple(mapping[x] for x in a.args)) for a in atoms1
        )

    def search(i, mapping, used):
        if i == len(order):
            return apply(mapping) == atoms2
        c = order[i]
        for d in candidates[c]:
            if d in used:
                continue
            mapping[c] = d
            used.add(d)
            if search(i + 1, mapping, used):
                return True
            used.discard(d)
            del mapping[c]
        return False

    return search(0, {}, set())


# ---------------------------------------------------------------------------
# Weisfeiler-Lehman style invariant hashing

_WL_ROUNDS = 3


def _h(text: str) -> str:
    return blake2b(text.encode(), digest_size=16).hexdigest()


def _wl_refine(lit_labels, term_labels, edges, rounds=_WL_ROUNDS):
    # edges: list of (lit_index, position, term_index)
    by_term = {}
    by_lit = {}
    for li, pos, ti in edges:
        by_term.setdefault(ti, []).append((pos, li))
        by_lit.setdefault(li, []).append((pos, ti))
    for _ in range(rounds):
        new_terms = {}
        for ti, label in term_labels.items():
            incident = sorted(
                f"{pos}:{lit_labels[li]}" for pos, li in by_term.get(ti, [])
            )
            new_terms[ti] = _h(label + "|" + ";".join(incident))
        new_lits = {}
        for li, label in lit_labels.items():
            slots = sorted(by_lit.get(li, []))
            parts = [f"{pos}:{term_labels[ti]}" for pos, ti in slots]
            new_lits[li] = _h(label + "|" + ";".join(parts))
        term_labels, lit_labels = new_terms, new_lits
    return lit_labels, term_labels


def wl_hash(obj) -> str:
    """Invariant hash: equal for isomorphic inputs, distinct with high
    probability otherwise.  Clauses and rules are hashed up to variable
    renaming; examples up to constant bijection."""
    if isinstance(obj, HornRule):
        obj = obj.to_clause()
    if isinstance(obj, Clause):
        literals = sorted(obj.literals, key=str)
        terms = []
        term_id = {}
        lit_labels = {}
        edges = []
        for li, lit in enumerate(literals):
            lit_labels[li] = (
                f"{'+' if lit.positive else '-'}"
                f"{lit.atom.predicate.name}/{lit.atom.predicate.arity}"
            )
            for pos, arg in enumerate(lit.atom.args):
                if arg not in term_id:
                    term_id[arg] = len(terms)
                    terms.append(arg)
                edges.append((li, pos, term_id[arg]))
        term_labels = {
            i: ("var" if isinstance(t, Variable) else f"const:{t.name}")
            for i, t in enumerate(terms)
        }
        lit_labels, term_labels = _wl_refine(lit_labels, term_labels, edges)
        summary = (
            "clause|"
            + ";".join(sorted(lit_labels.values()))
            + "|"
            + ";".join(sorted(term_labels.values()))
            + f"|alldiff={obj.alldiff}"
        )
        return _h(summary)

    atoms, constants = _structure(obj)
    atom_list = sorted(atoms, key=str)
    term_id = {}
    terms = []
    lit_labels = {}
    edges = []
    for li, atom in enumerate(atom_list):
        lit_labels[li] = f"+{atom.predicate.name}/{atom.predicate.arity}"
        for pos, arg in enumerate(atom.args):
            if arg not in term_id:
                term_id[arg] = len(terms)
                terms.append(arg)
            edges.append((li, pos, term_id[arg]))
    term_labels = {i: "const" for i in range(len(terms))}
    lit_labels, term_labels = _wl_refine(lit_labels, term_labels, edges)
    isolated = len(constants) - len(terms)
    summary = (
        "example|"
        + ";".join(sorted(lit_labels.values()))
        + "|"
        + ";".join(sorted(term_labels.values()))
        + f"|isolated={isolated}"
    )
    return _h(summary)


# ---------------------------------------------------------------------------
# Theta-subsumption


def theta_subsumes(c1: Clause, c2: Clause) -> bool:
    """True iff some substitution theta maps c1's literals into c2.

    When c1 carries alldiff, theta must be injective on c1's variables, so
    two of them may not collapse onto one variable of c2.
    """
    from .csp import ConjunctiveQuery, Matcher
    from .data import GlobalExample

    if not c1.literals:
        return True
    if len(c1.literals) > len(c2.literals):
        # Literal sets: a bigger set cannot map into a smaller one... unless
        # several c1 literals share an image; that needs theta to merge
        # literals, which the data encoding below still finds.
        pass

    def tagged(pred, positive):
        return Predicate(("p_" if positive else "n_") + pred.name, pred.arity)

    def term_const(t):
        if isinstance(t, Variable):
            return Constant("v:" + t.name)
        return Constant("c:" + t.name)

    data_atoms = set()
    for lit in c2.literals:
        data_atoms.add(
            Atom(
                tagged(lit.atom.predicate, lit.positive),
                tuple(term_const(a) for a in lit.atom.args),
            )
        )
    universe = {term_const(t) for lit in c2.literals for t in lit.atom.args}
    universe.update(term_const(c) for c in _clause_constants(c1))
    example = GlobalExample(data_atoms, constants=universe)

    query_atoms = []
    for lit in c1.literals:
        query_atoms.append(
            Atom(
                tagged(lit.atom.predicate, lit.positive),
                tuple(
                    a if isinstance(a, Variable) else term_const(a)
                    for a in lit.atom.args
                ),
            )
        )
    query = ConjunctiveQuery(atoms=tuple(query_atoms), alldiff=c1.alldiff)
    return Matcher(example).satisfiable(query)


def _clause_constants(clause: Clause):
    out = set()
    for lit in clause.literals:
        out.update(lit.atom.constants())
    return out


# ---------------------------------------------------------------------------
# Text syntax

_IDENT = r"[A-Za-z0-9_]+"
_ATOM_RE = re.compile(rf"^({_IDENT})\((\s*(?:{_IDENT}\s*(?:,\s*{_IDENT}\s*)*)?)\)$")
_BARE_RE = re.compile(rf"^({_IDENT})$")


def _split_atom_text(text, line=None):
    text = text.strip()
    m = _ATOM_RE.match(text)
    if m:
        name = m.group(1)
        inner = m.group(2).strip()
        args = [t.strip() for t in inner.split(",")] if inner else []
        return name, args
    m = _BARE_RE.match(text)
    if m:
        return m.group(1), []
    raise ParseError(f"malformed atom {text!r}", line=line)


def parse_ground_atom(text, line=None) -> Atom:
    """`pred(c1,c2,...)`; every argument is a constant."""
    name, args = _split_atom_text(text, line)
    return Atom(Predicate(name, len(args)), tuple(Constant(a) for a in args))


def parse_formula_atom(text, line=None) -> Atom:
    """Formula context: uppercase-initial tokens are variables."""
    name, args = _split_atom_text(text, line)
    terms = tuple(
        Variable(a) if a[0].isupper() else Constant(a) for a in args
    )
    return Atom(Predicate(name, len(args)), terms)


def parse_literal(text, line=None) -> Literal:
    text = text.strip()
    positive = True
    if text.startswith("!"):
        positive = False
        text = text[1:]
    return Literal(parse_formula_atom(text, line), positive)


def parse_clause(text, line=None) -> Clause:
    """`l1 v l2 v ...` with `!` negation; `@nodiff` suffix drops alldiff."""
    text = text.strip()
    alldiff = True
    if text.endswith("@nodiff"):
        alldiff = False
        text = text[: -len("@nodiff")].strip()
    if text == BOTTOM_TOKEN:
        return BOTTOM
    if not text:
        raise ParseError("empty clause text", line=line)
    parts = re.split(r"\s+v\s+", text)
    return Clause((parse_literal(p, line) for p in parts), alldiff)
