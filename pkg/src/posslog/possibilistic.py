"""Stratified weighted theories, the induced possibility distribution,
the exact encoding of width-k marginal distributions, and MAP inference
via a logarithmic number of satisfiability checks.

Theory files carry one formula per line, ``<weight> :: <clause>``, with
``_bot_`` for falsum, ``!`` negation, ``v`` disjunction, implicit alldiff
unless the clause ends in ``@nodiff``, ordered by descending weight.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction

from .errors import DomainError, EvidenceError, ParseError, SizeError
from .logic import (
    BOTTOM,
    BOTTOM_TOKEN,
    Atom,
    Clause,
    Literal,
    Variable,
    ground,
    parse_clause,
)
from . import sat
from .data import LocalExample, canonical_constants, marginal_distribution

_LEVEL_MERGE_EPS = 1e-9
HARD_LEVEL = 1.0


@dataclass(frozen=True)
class WeightedFormula:
    formula: Clause
    weight: float

    def __post_init__(self):
        if not 0.0 <= self.weight <= 1.0:
            raise DomainError(f"weight {self.weight} outside [0,1]")


class StratifiedTheory:
    """Weighted clauses grouped into strata by strictly increasing level.

    Clauses are canonically renamed on construction, so structurally equal
    theories compare equal and files round-trip exactly.
    """

    def __init__(self, weighted):
        pairs = []
        for wf in weighted:
            if not isinstance(wf, WeightedFormula):
                wf = WeightedFormula(*wf)
            pairs.append(WeightedFormula(wf.formula.rename_canonically(), wf.weight))
        levels = []
        strata = []
        for wf in sorted(pairs, key=lambda w: w.weight):
            if levels and abs(wf.weight - levels[-1]) <= _LEVEL_MERGE_EPS:
                strata[-1].add(wf.formula)
            else:
                levels.append(wf.weight)
                strata.append({wf.formula})
        self.levels = tuple(levels)
        self.strata = tuple(frozenset(s) for s in strata)
        if any(f.is_bottom for s in self.strata[1:] for f in s):
            raise DomainError("falsum must sit at the minimum level")

    def __eq__(self, other):
        return (
            isinstance(other, StratifiedTheory)
            and self.levels == other.levels
            and self.strata == other.strata
        )

    def __hash__(self):
        return hash((self.levels, self.strata))

    def __len__(self):
        return sum(len(s) for s in self.strata)

    def weighted_formulas(self):
        """(clause, level) pairs, descending level, deterministic order."""
        out = []
        for level, stratum in zip(reversed(self.levels), reversed(self.strata)):
            for clause in sorted(stratum, key=lambda c: c.canonical_form()):
                out.append((clause, level))
        return out

    @property
    def hard(self):
        if self.levels and self.levels[-1] == HARD_LEVEL:
            return self.strata[-1]
        return frozenset()

    @property
    def soft(self):
        out = []
        for level, stratum in zip(self.levels, self.strata):
            if level != HARD_LEVEL:
                for clause in sorted(stratum, key=lambda c: c.canonical_form()):
                    if not clause.is_bottom:
                        out.append((clause, level))
        return out

    def cut_from(self, index):
        """Formulas at stratum ``index`` and above (upward-closed cut)."""
        out = set()
        for stratum in self.strata[index:]:
            out |= stratum
        return out

    def cut(self, mu):
        """Formulas with level >= mu."""
        out = set()
        for level, stratum in zip(self.levels, self.strata):
            if level >= mu - _LEVEL_MERGE_EPS:
                out |= stratum
        return out

    def __repr__(self):
        return f"StratifiedTheory({len(self)} formulas, {len(self.levels)} strata)"


def format_theory(theory: StratifiedTheory) -> str:
    lines = [f"{weight!r} :: {clause}" for clause, weight in
             theory.weighted_formulas()]
    return "\n".join(lines) + "\n"


def parse_theory(text) -> StratifiedTheory:
    weighted = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "::" not in line:
            raise ParseError("expected '<weight> :: <clause>'", line=lineno)
        left, right = line.split("::", 1)
        try:
            weight = float(left.strip())
        except ValueError:
            raise ParseError(f"bad weight {left.strip()!r}", line=lineno)
        if not 0.0 <= weight <= 1.0:
            raise ParseError(f"weight {weight} outside [0,1]", line=lineno)
        weighted.append(WeightedFormula(parse_clause(right, lineno), weight))
    return StratifiedTheory(weighted)


# ---------------------------------------------------------------------------
# Possibility distribution


def violates(clause: Clause, world_atoms, constants) -> bool:
    """Does some (alldiff-respecting) grounding of the clause have every
    literal false in the world?"""
    if clause.is_bottom:
        return True
    for g in ground(clause, constants):
        if all(
            (lit.atom in world_atoms) != lit.positive
            for lit in g.literals
        ):
            return True
    return False


def possibility(theory: StratifiedTheory, world, constants=None) -> float:
    """min over violated formulas of 1 - level; 1 when nothing is violated."""
    if constants is None:
        constants = world.constants
    atoms = frozenset(world.atoms) if hasattr(world, "atoms") else frozenset(world)
    # Scan strata from the highest level down: the first violated stratum
    # realizes the minimum.
    for level, stratum in zip(reversed(theory.levels), reversed(theory.strata)):
        if any(violates(c, atoms, constants) for c in stratum):
            return 1.0 - level
    return 1.0


# ---------------------------------------------------------------------------
# Exact encoding of the width-k marginal distribution

_ENCODING_ATOM_CAP = 16


@dataclass(frozen=True)
class MarginalClassFormula:
    """A complete conjunction pinning one isomorphism class of width-k
    worlds: every ground atom of the width-k language occurs exactly once,
    positively or negatively, over alldiff-bound variables."""

    representative: LocalExample
    cardinality: int
    signature: frozenset

    def conjunction_literals(self):
        k = self.representative.width
        subst = {c: Variable(f"X{c.name}") for c in canonical_constants(k)}
        lits = []
        for atom in sat.signature_atoms(self.signature, canonical_constants(k)):
            lifted = Atom(atom.predicate, tuple(subst[c] for c in atom.args))
            lits.append(Literal(lifted, atom in self.representative.atoms))
        return lits

    def negation_clause(self) -> Clause:
        return Clause((l.negate() for l in self.conjunction_literals()),
                      alldiff=True)


def enumerate_marginal_classes(example, k):
    """(MarginalClassFormula, class probability) per isomorphism class of
    width-k worlds over the example's signature, zero-probability classes
    included.  Probabilities are exact fractions."""
    atoms = sat.signature_atoms(example.signature, canonical_constants(k))
    if len(atoms) > _ENCODING_ATOM_CAP:
        raise SizeError(
            f"{len(atoms)} ground atoms exceed the exact-encoding cap "
            f"{_ENCODING_ATOM_CAP}"
        )
    dist = marginal_distribution(example, k)

    classes = {}
    for bits in itertools.product((False, True), repeat=len(atoms)):
        world = LocalExample(
            (a for a, b in zip(atoms, bits) if b), k
        )
        canon = min(
            (m.canonical_text(), m)
            for m in _permutation_images(world, k)
        )[1]
        if canon not in classes:
            classes[canon] = set()
        classes[canon].add(world)

    out = []
    signature = frozenset(example.signature)
    for canon in sorted(classes, key=LocalExample.canonical_text):
        members = classes[canon]
        prob = sum((dist.get(m, Fraction(0)) for m in members), Fraction(0))
        out.append((MarginalClassFormula(canon, len(members), signature), prob))
    return out


def _permutation_images(world, k):
    consts = canonical_constants(k)
    for perm in itertools.permutations(consts):
        mapping = dict(zip(consts, perm))
        yield LocalExample(
            (Atom(a.predicate, tuple(mapping[x] for x in a.args))
             for a in world.atoms),
            k,
        )


def exact_encoding(example, k) -> StratifiedTheory:
    """The theory whose possibility distribution reproduces the width-k
    marginal exactly: one negated class conjunction per isomorphism class,
    weighted 1 - P(class)/cardinality; weight-zero formulas are dropped
    and unseen classes weigh 1."""
    weighted = []
    for cls, prob in enumerate_marginal_classes(example, k):
        weight = 1 - Fraction(prob, cls.cardinality)
        if weight == 0:
            continue
        weighted.append(WeightedFormula(cls.negation_clause(), float(weight)))
    return StratifiedTheory(weighted)


# ---------------------------------------------------------------------------
# MAP inference


@dataclass
class InferenceStats:
    cutoff_sat_calls: int = 0
    entail_sat_calls: int = 0

    @property
    def total(self):
        return self.cutoff_sat_calls + self.entail_sat_calls


class InferenceSession:
    """Caches per-stratum groundings of one theory over one constant set so
    repeated cutoff searches and entailment probes stay cheap."""

    def __init__(self, theory: StratifiedTheory, constants):
        self.theory = theory
        self.constants = frozenset(constants)
        self._stratum_clauses = []
        for stratum in theory.strata:
            collected = []
            for formula in sorted(stratum, key=lambda c: c.canonical_form()):
                if formula.is_bottom:
                    collected.append(formula)
                elif formula.variables():
                    collected.extend(sorted(ground(formula, self.constants),
                                            key=str))
                else:
                    collected.append(formula)
            self._stratum_clauses.append(collected)

    def cut_cnf(self, index, evidence, extra_atoms=()):
        cnf = sat.GroundCNF()
        for atom in extra_atoms:
            cnf.var(atom)
        for lit in sorted(evidence, key=str):
            v = cnf.var(lit.atom)
            cnf.add_clause((v,) if lit.positive else (-v,))
        ok = True
        for clauses in self._stratum_clauses[index:]:
            for g in clauses:
                if g.is_bottom:
                    ok = False
                elif not g.is_tautology():
                    cnf.add_ground_clause(g)
        if not ok:
            cnf.add_clause(())  # unsatisfiable by construction
        return cnf


def _check_evidence(evidence):
    evidence = frozenset(evidence)
    atoms = {}
    for lit in evidence:
        prev = atoms.setdefault(lit.atom, lit.positive)
        if prev != lit.positive:
            raise EvidenceError(f"complementary evidence on {lit.atom}")
    return evidence


@dataclass(frozen=True)
class Cutoff:
    level: float | None      # None when even the top stratum conflicts
    stratum_index: int       # first index of the consistent cut (n = empty)
    cut: frozenset


def map_cutoff(theory, evidence, constants, stats=None,
               session=None) -> Cutoff:
    """Smallest stratum level whose upward-closed cut is consistent with
    the evidence, located by binary search over the sorted levels with at
    most ceil(log2(n + 1)) + 1 satisfiability calls."""
    evidence = _check_evidence(evidence)
    if session is None:
        session = InferenceSession(theory, constants)
    if stats is None:
        stats = InferenceStats()
    n = len(theory.levels)

    def consistent(index):
        stats.cutoff_sat_calls += 1
        return sat.solve(session.cut_cnf(index, evidence)).satisfiable

    lo, hi = 0, n  # invariant: cut at hi consistent (index n = empty cut)
    while lo < hi:
        mid = (lo + hi) // 2
        if consistent(mid):
            hi = mid
        else:
            lo = mid + 1
    index = lo
    level = theory.levels[index] if index < n else None
    return Cutoff(level=level, stratum_index=index,
                  cut=frozenset(theory.cut_from(index)))


def map_entails(theory, evidence, constants, query: Atom, stats=None,
                session=None) -> bool:
    """(theory, evidence) entails the query atom iff the consistent cut
    plus evidence plus the negated query is unsatisfiable."""
    evidence = _check_evidence(evidence)
    if session is None:
        session = InferenceSession(theory, constants)
    if stats is None:
        stats = InferenceStats()
    cutoff = map_cutoff(theory, evidence, constants, stats, session)
    cnf = session.cut_cnf(cutoff.stratum_index, evidence)
    v = cnf.var(query)
    stats.entail_sat_calls += 1
    return not sat.solve(cnf, assumptions=(-v,)).satisfiable


def map_prediction(theory, evidence, constants, signature=None,
                   stats=None, session=None) -> frozenset:
    """Ground atoms predicted true: every atom entailed by the consistent
    cut plus evidence (which includes the positive evidence itself); all
    other atoms of the language are predicted false."""
    evidence = _check_evidence(evidence)
    if session is None:
        session = InferenceSession(theory, constants)
    if stats is None:
        stats = InferenceStats()
    if signature is None:
        signature = {lit.atom.predicate for lit in evidence}
        for clause, _ in theory.weighted_formulas():
            signature |= {l.atom.predicate for l in clause.literals}
    cutoff = map_cutoff(theory, evidence, constants, stats, session)
    cnf = session.cut_cnf(cutoff.stratum_index, evidence)
    universe = sat.signature_atoms(signature, constants)
    for atom in universe:
        cnf.var(atom)

    stats.entail_sat_calls += 1
    base = sat.solve(cnf)
    assert base.satisfiable, "consistent cut must stay satisfiable"
    candidates = set(base.witness)
    entailed = set()
    while candidates:
        atom = min(candidates, key=str)
        candidates.discard(atom)
        v = cnf.var(atom)
        stats.entail_sat_calls += 1
        verdict = sat.solve(cnf, assumptions=(-v,))
        if not verdict.satisfiable:
            entailed.add(atom)
        else:
            # Every atom false in this countermodel is not entailed.
            candidates &= verdict.witness
    entailed.update(lit.atom for lit in evidence if lit.positive)
    return frozenset(entailed)
