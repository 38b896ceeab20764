"""Propositional oracle over ground atoms: relational grounding to CNF, a
complete DPLL search with watched literals, model counting (optionally
under parity rows), full-model enumeration with lazy relational grounding,
and entailment checks.

Literals are signed 1-based integers as in DIMACS; the atom table maps
them back to ground atoms.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

from .errors import BudgetExhausted
from .logic import Atom, Clause, Literal, constant_key, ground


class GroundCNF:
    """Clause list over an atom/variable table (bijective both ways)."""

    def __init__(self):
        self.atoms = []            # var id - 1 -> Atom
        self.var_of = {}           # Atom -> var id (1-based)
        self.clauses = []          # list of tuples of signed ints
        self._clause_set = set()

    def var(self, atom: Atom) -> int:
        v = self.var_of.get(atom)
        if v is None:
            self.atoms.append(atom)
            v = len(self.atoms)
            self.var_of[atom] = v
        return v

    @property
    def nvars(self):
        return len(self.atoms)

    def add_clause(self, lits) -> bool:
        """Deduplicated add; tautologies are dropped.  Returns True if the
        clause entered the set."""
        lits = tuple(sorted(set(lits)))
        if any(-l in lits for l in lits):
            return False
        if lits in self._clause_set:
            return False
        self._clause_set.add(lits)
        self.clauses.append(lits)
        return True

    def add_ground_clause(self, clause: Clause) -> bool:
        return self.add_clause(
            (self.var(l.atom) if l.positive else -self.var(l.atom))
            for l in clause.literals
        )

    def copy(self) -> "GroundCNF":
        out = GroundCNF()
        out.atoms = list(self.atoms)
        out.var_of = dict(self.var_of)
        out.clauses = list(self.clauses)
        out._clause_set = set(self._clause_set)
        return out

    def to_dimacs(self):
        """(dimacs text, atom table text) for external cross-checking."""
        lines = [f"p cnf {self.nvars} {len(self.clauses)}"]
        lines.extend(" ".join(str(l) for l in c) + " 0" for c in self.clauses)
        table = [f"{i + 1} {atom}" for i, atom in enumerate(self.atoms)]
        return "\n".join(lines) + "\n", "\n".join(table) + "\n"


@dataclass(frozen=True)
class SatVerdict:
    satisfiable: bool
    witness: frozenset | None = None


def ground_to_cnf(formulas, constants, evidence=(), extra_atoms=()) -> GroundCNF:
    """Every grounding of every clause (alldiff honored) plus one unit
    clause per evidence literal."""
    cnf = GroundCNF()
    for atom in extra_atoms:
        cnf.var(atom)
    for lit in evidence:
        v = cnf.var(lit.atom)
        cnf.add_clause((v if lit.positive else -v,))
    for formula in sorted(formulas, key=lambda f: str(f)):
        if not formula.variables():
            cnf.add_ground_clause(formula)
            continue
        for g in sorted(ground(formula, constants), key=str):
            cnf.add_ground_clause(g)
    return cnf


def signature_atoms(signature, constants):
    """All ground atoms of the language over the given constants."""
    consts = sorted(constants, key=constant_key)
    out = []
    for pred in sorted(signature):
        for args in itertools.product(consts, repeat=pred.arity):
            out.append(Atom(pred, args))
    return out


# ---------------------------------------------------------------------------
# DPLL with watched literals


def solve(cnf: GroundCNF, assumptions=()) -> SatVerdict:
    """Complete decision; the witness (set of true atoms) is re-validated
    against every clause before returning."""
    model = _dpll(cnf.nvars, list(cnf.clauses) + [(a,) for a in assumptions])
    if model is None:
        return SatVerdict(False, None)
    witness = frozenset(
        cnf.atoms[i] for i in range(cnf.nvars) if model[i + 1] > 0
    )
    for clause in cnf.clauses:
        assert any(model[abs(l)] * l > 0 for l in clause), "witness check failed"
    return SatVerdict(True, witness)


def _dpll(nvars, clauses):
    """Assignment array (index 1..nvars, values +1/-1) or None."""
    assign = [0] * (nvars + 1)
    watch = {}
    units = []
    for clause in clauses:
        if not clause:
            return None
        if len(clause) == 1:
            units.append(clause[0])
        else:
            watch.setdefault(clause[0], []).append(clause)
            watch.setdefault(clause[1], []).append(clause)
    watch_pos = {}
    for clause in clauses:
        if len(clause) > 1:
            watch_pos[id(clause)] = [clause[0], clause[1]]

    trail = []
    levels = []          # (trail length, decided literal, flipped?)

    def enqueue(lit):
        v = abs(lit)
        val = 1 if lit > 0 else -1
        if assign[v] != 0:
            return assign[v] == val
        assign[v] = val
        trail.append(v)
        queue.append(lit)
        return True

    queue = []

    def propagate():
        while queue:
            lit = queue.pop()
            falsified = -lit
            watching = watch.get(falsified)
            if not watching:
                continue
            i = 0
            while i < len(watching):
                clause = watching[i]
                pair = watch_pos[id(clause)]
                other = pair[0] if pair[1] == falsified else pair[1]
                if assign[abs(other)] * other > 0:
                    i += 1
                    continue
                moved = False
                for cand in clause:
                    if cand == other or cand == falsified:
                        continue
                    v = assign[abs(cand)]
                    if v == 0 or v * cand > 0:
                        if pair[0] == falsified:
                            pair[0] = cand
                        else:
                            pair[1] = cand
                        watch.setdefault(cand, []).append(clause)
                        watching[i] = watching[-1]
                        watching.pop()
                        moved = True
                        break
                if moved:
                    continue
                if not enqueue(other):
                    return False
                i += 1
        return True

    for u in units:
        if not enqueue(u):
            return None
    if not propagate():
        return None

    next_var = 1
    while True:
        while next_var <= nvars and assign[next_var] != 0:
            next_var += 1
        if next_var > nvars:
            return assign
        # Decide: try False first (biases witnesses toward sparse worlds).
        levels.append([len(trail), -next_var, False, next_var])
        queue.clear()
        enqueue(-next_var)
        while not propagate():
            # Backtrack chronologically, flipping the newest unflipped decision.
            while levels and levels[-1][2]:
                mark = levels.pop()[0]
                while len(trail) > mark:
                    assign[trail.pop()] = 0
            if not levels:
                return None
            level = levels[-1]
            mark = level[0]
            while len(trail) > mark:
                assign[trail.pop()] = 0
            level[1] = -level[1]
            level[2] = True
            queue.clear()
            enqueue(level[1])
        next_var = levels[-1][3]


# ---------------------------------------------------------------------------
# Model counting (exact, optional parity rows, early-stop threshold)


def count_models(cnf: GroundCNF, xor_rows=(), limit=None, node_budget=None):
    """Number of assignments over the full atom table satisfying every
    clause and parity row.  With ``limit`` set, stops early and returns
    limit + 1 as soon as the count provably exceeds it.

    ``xor_rows`` are (var-id bitmask, rhs) pairs over 1-based variables
    mapped to bit positions var-1.
    """
    n = cnf.nvars
    clauses = [tuple(c) for c in cnf.clauses]
    for c in clauses:
        if not c:
            return 0

    state = _CountState(n, clauses, xor_rows, node_budget)
    return state.count(limit)


class _CountState:
    def __init__(self, n, clauses, xor_rows, node_budget):
        self.n = n
        self.clauses = clauses
        self.assign = [0] * (n + 1)
        self.sat_count = [0] * len(clauses)      # satisfied-by count
        self.open_count = [len(c) for c in clauses]
        self.occurs = [[] for _ in range(n + 1)]
        for ci, c in enumerate(clauses):
            for l in c:
                self.occurs[abs(l)].append((ci, l))
        self.unsat_clauses = len(clauses)
        self.masks = [m for m, _ in xor_rows]
        self.rhs = [r for _, r in xor_rows]
        self.nodes = 0
        self.budget = node_budget

    def count(self, limit):
        total = self._descend(limit)
        return total

    def _free_weight(self):
        """2**(free vars - rank of the parity system restricted to them);
        0 if the residual system is inconsistent."""
        free = [v for v in range(1, self.n + 1) if self.assign[v] == 0]
        nfree = len(free)
        rows = [(m, r) for m, r in zip(self.masks, self.rhs) if m or r]
        if not rows:
            return 1 << nfree
        # Gaussian elimination over the residual rows.
        rank = 0
        work = rows[:]
        for bitvar in free:
            bit = 1 << (bitvar - 1)
            pivot = None
            for i in range(rank, len(work)):
                if work[i][0] & bit:
                    pivot = i
                    break
            if pivot is None:
                continue
            work[rank], work[pivot] = work[pivot], work[rank]
            pm, pr = work[rank]
            for i in range(len(work)):
                if i != rank and work[i][0] & bit:
                    work[i] = (work[i][0] ^ pm, work[i][1] ^ pr)
            rank += 1
        if any(m == 0 and r for m, r in work):
            return 0
        return 1 << (nfree - rank)

    def _descend(self, limit):
        self.nodes += 1
        if self.budget is not None and self.nodes > self.budget:
            raise BudgetExhausted("model counting budget exhausted",
                                  partial={"nodes": self.nodes})
        # Unit propagation with trail for undo.
        trail = []
        xor_trail = []
        ok = self._propagate(trail, xor_trail)
        if not ok:
            self._undo(trail, xor_trail)
            return 0
        if self.unsat_clauses == 0:
            total = self._free_weight()
            self._undo(trail, xor_trail)
            return total
        var = self._pick_var()
        if var == 0:
            # Clauses remain but no variable occurs in an open clause: the
            # remaining obligations are parity-only.
            total = self._free_weight() if self.unsat_clauses == 0 else 0
            self._undo(trail, xor_trail)
            return total
        total = 0
        for value in (1, -1):
            sub_trail = []
            sub_xor = []
            if self._set(var, value, sub_trail, sub_xor):
                total += self._descend(None if limit is None else limit - total)
            self._undo(sub_trail, sub_xor)
            if limit is not None and total > limit:
                self._undo(trail, xor_trail)
                return total
        self._undo(trail, xor_trail)
        return total

    def _pick_var(self):
        best = 0
        best_len = None
        for ci, c in enumerate(self.clauses):
            if self.sat_count[ci] == 0:
                open_len = self.open_count[ci]
                if best_len is None or open_len < best_len:
                    for l in c:
                        if self.assign[abs(l)] == 0:
                            best = abs(l)
                            best_len = open_len
                            break
                    if best_len == 1:
                        break
        if best:
            return best
        # Parity-only branching.
        for m in self.masks:
            if m:
                return (m & -m).bit_length()
        return 0

    def _set(self, var, value, trail, xor_trail):
        # All bookkeeping is applied even on conflict so _undo stays exact.
        if self.assign[var] != 0:
            return self.assign[var] == value
        self.assign[var] = value
        trail.append(var)
        dead = False
        for ci, l in self.occurs[var]:
            if l * value > 0:
                if self.sat_count[ci] == 0:
                    self.unsat_clauses -= 1
                self.sat_count[ci] += 1
            else:
                self.open_count[ci] -= 1
                if self.open_count[ci] == 0 and self.sat_count[ci] == 0:
                    dead = True
        if self.masks:
            bit = 1 << (var - 1)
            for ri in range(len(self.masks)):
                if self.masks[ri] & bit:
                    xor_trail.append((ri, self.masks[ri], self.rhs[ri]))
                    self.masks[ri] &= ~bit
                    if value > 0:
                        self.rhs[ri] ^= 1
                    if self.masks[ri] == 0 and self.rhs[ri]:
                        dead = True
        return not dead

    def _propagate(self, trail, xor_trail):
        changed = True
        while changed:
            changed = False
            for ci, c in enumerate(self.clauses):
                if self.sat_count[ci] == 0 and self.open_count[ci] == 1:
                    for l in c:
                        if self.assign[abs(l)] == 0:
                            if not self._set(
                                abs(l), 1 if l > 0 else -1, trail, xor_trail
                            ):
                                return False
                            changed = True
                            break
                elif self.sat_count[ci] == 0 and self.open_count[ci] == 0:
                    return False
            for ri in range(len(self.masks)):
                m = self.masks[ri]
                if m and m & (m - 1) == 0:
                    var = m.bit_length()
                    if not self._set(
                        var, 1 if self.rhs[ri] else -1, trail, xor_trail
                    ):
                        return False
                    changed = True
        return True

    def _undo(self, trail, xor_trail):
        for ri, m, r in reversed(xor_trail):
            self.masks[ri] = m
            self.rhs[ri] = r
        for var in reversed(trail):
            value = self.assign[var]
            self.assign[var] = 0
            for ci, l in self.occurs[var]:
                if l * value > 0:
                    self.sat_count[ci] -= 1
                    if self.sat_count[ci] == 0:
                        self.unsat_clauses += 1
                else:
                    self.open_count[ci] += 1


# ---------------------------------------------------------------------------
# Full-model enumeration with optional lazy relational grounding


def enumerate_full_models(
    cnf: GroundCNF,
    limit,
    xor_rows=(),
    lazy=None,
    constants=None,
    node_budget=None,
):
    """Up to ``limit`` distinct full assignments, as frozensets of true
    atoms, blocking each found model.

    With ``lazy`` (a set of non-ground clauses), candidate witnesses are
    checked relationally and only violated groundings are added — cutting
    plane style.  Callers that need exhaustive distinct-world enumeration
    must pre-seed the atom table (blocking assumes it stays fixed).
    Returns (models, exhausted).
    """
    work = cnf.copy()
    lazy = sorted(lazy, key=str) if lazy else []
    models = []
    blocked = []
    budget = [node_budget]
    while len(models) <= limit:
        model = _solve_counting_style(work, xor_rows, blocked, budget)
        if model is None:
            return models, True
        if lazy and _add_violated_groundings(work, lazy, constants, model):
            continue
        models.append(model)
        if len(models) > limit:
            return models[:limit], False
        blocked.append(
            tuple(
                (work.var(a) if a in model else -work.var(a))
                for a in work.atoms
            )
        )
    return models, False


def _solve_counting_style(cnf, xor_rows, blocked, budget):
    clauses = list(cnf.clauses) + [tuple(-l for l in b) for b in blocked]
    for c in clauses:
        if not c:
            return None
    state = _CountState(cnf.nvars, clauses, xor_rows, budget[0])
    model = _find_one(state)
    if budget[0] is not None:
        budget[0] = max(0, budget[0] - state.nodes)
    if model is None:
        return None
    return frozenset(cnf.atoms[v - 1] for v in range(1, cnf.nvars + 1)
                     if model[v] > 0)


def _find_one(state):
    state.nodes += 1
    if state.budget is not None and state.nodes > state.budget:
        raise BudgetExhausted("model search budget exhausted",
                              partial={"nodes": state.nodes})
    trail = []
    xor_trail = []
    if not state._propagate(trail, xor_trail):
        state._undo(trail, xor_trail)
        return None
    if state.unsat_clauses == 0 and not any(state.masks):
        if any(m == 0 and r for m, r in zip(state.masks, state.rhs)):
            state._undo(trail, xor_trail)
            return None
        # Fix remaining free vars to false.
        result = list(state.assign)
        for v in range(1, state.n + 1):
            if result[v] == 0:
                result[v] = -1
        state._undo(trail, xor_trail)
        return result
    var = state._pick_var()
    if var == 0:
        state._undo(trail, xor_trail)
        return None
    for value in (-1, 1):
        sub_trail = []
        sub_xor = []
        if state._set(var, value, sub_trail, sub_xor):
            model = _find_one(state)
            if model is not None:
                state._undo(sub_trail, sub_xor)
                state._undo(trail, xor_trail)
                return model
        state._undo(sub_trail, sub_xor)
    state._undo(trail, xor_trail)
    return None


def _add_violated_groundings(cnf, lazy_clauses, constants, world):
    """Ground every lazy clause instance violated by ``world`` (absent
    atoms read as false).  Returns the number of clauses added."""
    from .csp import Matcher, negation_query
    from .data import GlobalExample

    world_ex = GlobalExample(world, constants=constants)
    matcher = Matcher(world_ex)
    added = 0
    for clause in lazy_clauses:
        if not clause.variables():
            if _violated_ground(clause, world):
                if cnf.add_ground_clause(clause):
                    added += 1
            continue
        for assignment in matcher.enumerate_assignments(negation_query(clause)):
            g = clause.substitute(assignment)
            if cnf.add_ground_clause(g):
                added += 1
    return added


def _violated_ground(clause, world):
    for lit in clause.literals:
        value = lit.atom in world
        if value == lit.positive:
            return False
    return True


def consistent_lazy(fixed_true, clauses, constants, node_budget=None) -> bool:
    """Does some world extending ``fixed_true`` (other atoms free) satisfy
    every grounding of ``clauses``?  Grounds incrementally."""
    cnf = GroundCNF()
    for atom in sorted(fixed_true, key=str):
        cnf.add_clause((cnf.var(atom),))
    models, _ = enumerate_full_models(
        cnf, limit=1, lazy=clauses, constants=constants, node_budget=node_budget
    )
    return bool(models)


# ---------------------------------------------------------------------------
# Entailment


def entails(formulas, constants, query) -> bool:
    """True iff formulas entail every grounding of ``query`` over the
    constant set (alldiff honored on the query)."""
    if isinstance(query, Clause) and query.variables():
        groundings = sorted(ground(query, constants), key=str)
    else:
        groundings = [query]
    base = ground_to_cnf(formulas, constants)
    for g in groundings:
        if g.is_tautology():
            continue
        cnf = base.copy()
        for lit in sorted(g.literals, key=str):
            v = cnf.var(lit.atom)
            cnf.add_clause((-v if lit.positive else v,))
        if solve(cnf).satisfiable:
            return False
    return True
