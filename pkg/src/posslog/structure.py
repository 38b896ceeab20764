"""Structure learning: exhaustive mining of exception-free hard clauses,
construction of non-trivial negative examples by rejection against the
hard rules, and per-predicate beam search for Horn rules.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

from .csp import ConjunctiveQuery, Matcher, negation_query
from .errors import DomainError
from .logic import (
    Atom,
    Clause,
    HornRule,
    Literal,
    Variable,
    clause_sort_key,
    constant_key,
    theta_subsumes,
    wl_hash,
)
from .sat import consistent_lazy

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class HardRuleConfig:
    t: int = 3           # max literals for general clauses
    t_prime: int = 4     # max literals for unary-only clauses
    k: int = 3           # max variables (the marginal width)

    def __post_init__(self):
        if self.t < 1 or self.k < 1:
            raise DomainError("t and k must be at least 1")
        if self.t_prime <= self.t:
            raise DomainError("t_prime must exceed t")


@dataclass
class LabeledExampleSet:
    predicate: object
    positives: frozenset
    negatives: frozenset
    n_nontrivial_est: float

    @property
    def w_neg(self):
        if not self.negatives:
            return 0.0
        return self.n_nontrivial_est / len(self.negatives)

    @property
    def degenerate(self):
        return not self.positives


@dataclass(frozen=True)
class BeamConfig:
    b: int = 10          # beam width
    l: int = 3           # max body literals
    k: int = 3           # max variables
    restarts: int = 3

    def __post_init__(self):
        if min(self.b, self.l, self.k, self.restarts) < 1:
            raise DomainError("beam parameters must be positive")


@dataclass(frozen=True)
class LearnedRule:
    rule: HornRule
    accuracy: float
    covered_pos: int
    covered_neg: int
    restart: int

    def provenance_line(self):
        return (
            f"restart={self.restart} accuracy={self.accuracy:.6f} "
            f"covered_pos={self.covered_pos} covered_neg={self.covered_neg} "
            f"rule={self.rule.to_clause().canonical_form()}"
        )


# ---------------------------------------------------------------------------
# Hard-rule mining


def _variable_pool(k):
    return tuple(Variable(f"V{i}") for i in range(1, k + 1))


def _literal_templates(signature, k):
    """All literals over the canonical variable pool, in a fixed order:
    predicate name, argument tuple, then sign (positive first)."""
    pool = _variable_pool(k)
    out = []
    for pred in sorted(signature):
        for args in itertools.product(pool, repeat=pred.arity):
            atom = Atom(pred, args)
            out.append(Literal(atom, True))
            out.append(Literal(atom, False))
    out.sort(key=lambda l: (l.atom.predicate.name,
                            tuple(a.name for a in l.atom.args),
                            not l.positive))
    return out


def _canonical_intro_order(literals):
    """Variables must appear in pool order: a literal may introduce V(j+1)
    only when V1..Vj already occur."""
    seen = set()
    for lit in literals:
        for v in lit.atom.args:
            if v not in seen:
                idx = int(v.name[1:])
                if idx != len(seen) + 1:
                    return False
                seen.add(v)
    return True


def enumerate_candidate_clauses(signature, cfg: HardRuleConfig):
    """Constant-free candidate clauses, alldiff, modulo isomorphism, by
    literal count then canonical form; syntactic tautologies skipped.
    Unary-only clauses run up to t_prime literals, all others up to t."""
    templates = _literal_templates(signature, cfg.k)
    tmpl_index = {lit: i for i, lit in enumerate(templates)}
    max_len = max(cfg.t, cfg.t_prime)
    seen_canon = set()
    level = [()]
    for size in range(1, max_len + 1):
        nxt = []
        emitted = []
        for lits in level:
            start = tmpl_index[lits[-1]] + 1 if lits else 0
            for tmpl in templates[start:]:
                cand = lits + (tmpl,)
                if not _canonical_intro_order(cand):
                    continue
                unary_only = all(
                    l.atom.predicate.arity == 1 for l in cand
                )
                if size > (cfg.t_prime if unary_only else cfg.t):
                    continue
                clause = Clause(cand, alldiff=True)
                if len(clause.literals) != size or clause.is_tautology():
                    continue
                canon = clause.canonical_form()
                if canon in seen_canon:
                    continue
                seen_canon.add(canon)
                nxt.append(cand)
                emitted.append(clause)
        emitted.sort(key=clause_sort_key)
        yield from emitted
        level = nxt


def learn_hard_rules(example, cfg: HardRuleConfig):
    """Every candidate clause with no counterexample in the data, kept
    only when no previously retained clause theta-subsumes it."""
    matcher = Matcher(example)
    retained = []
    for clause in enumerate_candidate_clauses(example.signature, cfg):
        if any(theta_subsumes(r, clause) for r in retained):
            continue
        if matcher.satisfiable(negation_query(clause)):
            continue
        retained.append(clause)
    return retained


# ---------------------------------------------------------------------------
# Training examples

_MAX_ATTEMPT_FACTOR = 20


def build_examples(example, hard_rules, predicate, budget, rng,
                   subsample_positives=False) -> LabeledExampleSet:
    """Positives are the true atoms of the predicate; negatives are
    sampled false atoms that stay consistent with the hard rules when
    added to the data (all unfixed atoms free), with the acceptance rate
    estimating the total count of non-trivial negatives."""
    if predicate not in example.signature:
        raise DomainError(f"{predicate} not in the example signature")
    consts = example.sorted_constants()
    positives = frozenset(
        a for a in example.atoms if a.predicate == predicate
    )
    if not positives:
        log.warning("predicate %s has no positive examples", predicate)
    pos_used = positives
    if subsample_positives and len(positives) > budget:
        pos_used = frozenset(rng.sample(sorted(positives, key=str), budget))

    universe = len(consts) ** predicate.arity
    n_false = universe - len(positives)
    hard_rules = sorted(hard_rules, key=clause_sort_key)

    def consistent(atom):
        return consistent_lazy(
            set(example.atoms) | {atom}, hard_rules, example.constants
        )

    negatives = set()
    if n_false <= 0:
        return LabeledExampleSet(predicate, pos_used, frozenset(), 0.0)

    if n_false <= budget:
        accepted = attempted = 0
        for args in itertools.product(consts, repeat=predicate.arity):
            atom = Atom(predicate, args)
            if atom in positives:
                continue
            attempted += 1
            if consistent(atom):
                accepted += 1
                negatives.add(atom)
        estimate = float(accepted)
    else:
        accepted = attempted = 0
        max_attempts = max(1000, _MAX_ATTEMPT_FACTOR * budget)
        while len(negatives) < budget and attempted < max_attempts:
            args = tuple(rng.choice(consts) for _ in range(predicate.arity))
            atom = Atom(predicate, args)
            if atom in positives:
                continue
            attempted += 1
            if consistent(atom):
                accepted += 1
                negatives.add(atom)
        estimate = (accepted / attempted) * n_false if attempted else 0.0

    return LabeledExampleSet(predicate, pos_used, frozenset(negatives),
                             estimate)


# ---------------------------------------------------------------------------
# Beam search

def _head_atom(predicate, k):
    if predicate.arity > k:
        raise DomainError(
            f"{predicate} needs {predicate.arity} variables, beam allows {k}"
        )
    pool = _variable_pool(k)
    return Atom(predicate, pool[: predicate.arity])


def rule_coverage(example, rule: HornRule, matcher=None):
    """Head-argument tuples the rule derives from the data: one body
    enumeration, head variables projected.  All rule variables are
    pairwise distinct (the implicit alldiff)."""
    if matcher is None:
        matcher = Matcher(example)
    head_vars = rule.head.args
    body_vars = []
    for b in sorted(rule.body, key=str):
        for v in b.variables():
            if v not in head_vars and v not in body_vars:
                body_vars.append(v)
    query = ConjunctiveQuery(atoms=tuple(sorted(rule.body, key=str)),
                             alldiff=True)
    if not rule.body:
        # Bodyless rule: every distinct-argument tuple is derived.
        consts = example.sorted_constants()
        return {
            args for args in itertools.product(consts,
                                               repeat=len(head_vars))
            if len(set(args)) == len(head_vars)
        }
    covered = set()
    variables = query.variables()
    missing = [v for v in head_vars if v not in variables]
    for assignment in matcher.enumerate_assignments(query):
        if missing:
            free = [c for c in example.sorted_constants()
                    if c not in assignment.values()]
            for extra in itertools.permutations(free, len(missing)):
                full = dict(assignment)
                full.update(zip(missing, extra))
                covered.add(tuple(full[v] for v in head_vars))
        else:
            covered.add(tuple(assignment[v] for v in head_vars))
    return covered


def _score(rule, covered, examples: LabeledExampleSet):
    pos_tuples = {a.args for a in examples.positives}
    neg_tuples = {a.args for a in examples.negatives}
    cov_pos = len(pos_tuples & covered)
    cov_neg = len(neg_tuples & covered)
    w = examples.w_neg
    total = len(pos_tuples) + len(neg_tuples) * w
    if total == 0:
        return 0.0, cov_pos, cov_neg
    acc = (cov_pos + (len(neg_tuples) - cov_neg) * w) / total
    return acc, cov_pos, cov_neg


def _beam_key(entry):
    rule, acc, *_ = entry
    clause = rule.to_clause()
    return (-acc, len(rule.body), len(clause.variables()),
            clause.canonical_form())


def _extensions(rule: HornRule, signature, cfg: BeamConfig):
    """Single-literal body extensions honoring the variable and length
    caps; fresh variables come from the canonical pool in order."""
    if len(rule.body) >= cfg.l:
        return
    used = list(rule.to_clause().variables())
    pool = _variable_pool(cfg.k)
    fresh = [v for v in pool if v not in used]
    for pred in sorted(signature):
        choices = used + fresh[: min(pred.arity, len(fresh))]
        for args in itertools.product(choices, repeat=pred.arity):
            new_vars = [v for v in args if v not in used]
            # Fresh variables must appear in pool order, without gaps.
            ordered = []
            for v in new_vars:
                if v not in ordered:
                    ordered.append(v)
            if ordered != fresh[: len(ordered)]:
                continue
            if len(used) + len(ordered) > cfg.k:
                continue
            atom = Atom(pred, args)
            if atom == rule.head or atom in rule.body:
                continue
            yield HornRule(rule.head, rule.body | {atom}, alldiff=True)


class _Forbidden:
    """Minimal set of rules that covered zero positives; candidates
    subsumed by any member are discarded before evaluation."""

    def __init__(self):
        self.members = []

    def blocks(self, clause):
        return any(theta_subsumes(m, clause) for m in self.members)

    def add(self, clause):
        if self.blocks(clause):
            return
        self.members = [m for m in self.members
                        if not theta_subsumes(clause, m)]
        self.members.append(clause)


def beam_search(example, predicate, examples: LabeledExampleSet,
                cfg: BeamConfig, blocked=()) -> list:
    """Repeated beam runs; each returns its best rule, and found rules
    subsume-block candidates of later runs."""
    if examples.degenerate:
        return []
    matcher = Matcher(example)
    forbidden = _Forbidden()
    found = list(blocked)
    results = []
    for restart in range(cfg.restarts):
        best = _beam_run(example, predicate, examples, cfg, matcher,
                         forbidden, found, restart)
        if best is None:
            break
        results.append(best)
        found.append(best.rule.to_clause())
    return results


def _beam_run(example, predicate, examples, cfg, matcher, forbidden,
              found, restart):
    init = HornRule(_head_atom(predicate, cfg.k), (), alldiff=True)
    covered = rule_coverage(example, init, matcher)
    acc, cp, cn = _score(init, covered, examples)
    beam = []
    best = None
    if cp > 0 and not any(
        theta_subsumes(f, init.to_clause()) for f in found
    ):
        beam = [(init, acc, cp, cn)]
        best = (init, acc, cp, cn)
    elif cp == 0:
        forbidden.add(init.to_clause())
        return None

    seen = {wl_hash(init): {init.to_clause().canonical_form()}}
    while beam:
        candidates = []
        for rule, *_ in beam:
            for ext in _extensions(rule, example.signature, cfg):
                clause = ext.to_clause()
                h = wl_hash(ext)
                bucket = seen.setdefault(h, set())
                canon = clause.canonical_form()
                if canon in bucket:
                    continue
                bucket.add(canon)
                if forbidden.blocks(clause):
                    continue
                if any(theta_subsumes(f, clause) for f in found):
                    continue
                cov = rule_coverage(example, ext, matcher)
                acc, cp, cn = _score(ext, cov, examples)
                if cp == 0:
                    forbidden.add(clause)
                    continue
                candidates.append((ext, acc, cp, cn))
        if not candidates:
            break
        candidates.sort(key=_beam_key)
        beam = candidates[: cfg.b]
        if best is None or _beam_key(beam[0]) < _beam_key(best):
            best = beam[0]
    if best is None:
        return None
    rule, acc, cp, cn = best
    return LearnedRule(rule=rule, accuracy=acc, covered_pos=cp,
                       covered_neg=cn, restart=restart)


def format_candidates(rules) -> str:
    lines = [f"cand :: {r.rule.to_clause().canonical_form()}" for r in rules]
    return "\n".join(lines) + ("\n" if lines else "")
