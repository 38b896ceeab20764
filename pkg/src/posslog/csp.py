"""Conjunctive-query matching over a ground-atom database.

Backtracking search with forward checking; variable order is smallest
current domain, value order ascending constant id.  Supports membership
constraints in(V,S), cardinality constraints card(k, vars...), AllDiff,
closed-world negated atoms, and global XOR (parity) constraints over
constant-indicator variables propagated by Gaussian elimination over GF(2).

Indicator variables are never decision variables: they live only in the
parity tableau.  A constant missing from every domain forces its indicator
to 0; assigning a constant forces its indicator to 1; an indicator
eliminated to 0 removes the constant from every open domain.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

from .errors import BudgetExhausted, DomainError
from .logic import Atom, Constant, Variable, constant_key


@dataclass(frozen=True)
class XorConstraint:
    """Parity constraint over constant indicators: xor of the indicators of
    ``constants`` equals ``parity``."""

    constants: frozenset
    parity: bool


@dataclass(frozen=True)
class ConjunctiveQuery:
    atoms: tuple = ()
    negated: tuple = ()          # closed-world: ground instance must be absent
    alldiff: bool = False
    card: tuple | None = None    # (k, (vars...)): assigned set has cardinality k
    member: tuple = ()           # ((Variable, frozenset[Constant]), ...)
    ordered: tuple = ()          # strictly ascending chain, symmetry breaking
    xors: tuple = ()

    def variables(self):
        seen = []
        for atom in self.atoms + self.negated:
            for v in atom.variables():
                if v not in seen:
                    seen.append(v)
        if self.card:
            for v in self.card[1]:
                if v not in seen:
                    seen.append(v)
        for v, _ in self.member:
            if v not in seen:
                raise DomainError(f"membership variable {v} not in query")
        return tuple(seen)

    def with_member(self, var, constants):
        return ConjunctiveQuery(
            self.atoms,
            self.negated,
            self.alldiff,
            self.card,
            self.member + ((var, frozenset(constants)),),
            self.ordered,
            self.xors,
        )


@dataclass(frozen=True)
class QuerySolution:
    assignment: dict

    def footprint(self):
        return frozenset(self.assignment.values())


class ExampleIndex:
    """Per-example lookup tables shared by concurrent matcher instances."""

    def __init__(self, example):
        self.example = example
        self.constants = sorted(example.constants, key=constant_key)
        self.const_idx = {c: i for i, c in enumerate(self.constants)}
        self.n = len(self.constants)
        self.full_mask = (1 << self.n) - 1
        self.tuples = {}        # predicate -> set of arg-index tuples
        self.pos_mask = {}      # (predicate, pos) -> bitmask of constants
        self.by_slot = {}       # (predicate, pos, cidx) -> list of tuples
        for atom in example.atoms:
            tup = tuple(self.const_idx[a] for a in atom.args)
            self.tuples.setdefault(atom.predicate, set()).add(tup)
        for pred, tups in self.tuples.items():
            for tup in sorted(tups):
                for pos, ci in enumerate(tup):
                    key = (pred, pos)
                    self.pos_mask[key] = self.pos_mask.get(key, 0) | (1 << ci)
                    self.by_slot.setdefault((pred, pos, ci), []).append(tup)


_INDEX_CACHE = {}


def example_index(example) -> ExampleIndex:
    idx = _INDEX_CACHE.get(id(example))
    if idx is None or idx.example is not example:
        idx = ExampleIndex(example)
        _INDEX_CACHE.clear()
        _INDEX_CACHE[id(example)] = idx
    return idx


def _bits(mask):
    while mask:
        low = mask & -mask
        yield low.bit_length() - 1
        mask ^= low


class _Frame:
    __slots__ = ("trail", "row_trail", "ind_trail", "support")

    def __init__(self):
        self.trail = []        # (var, old domain mask)
        self.row_trail = []    # (row index, old mask, old rhs)
        self.ind_trail = []    # indicator index (old state was free)
        self.support = None    # support mask before this frame


class Matcher:
    """Single-query CSP search over one immutable example.

    A matcher may be reused for many queries; each call owns private state.
    """

    def __init__(self, example):
        self.index = example_index(example)
        self.nodes = 0

    # -- public API --------------------------------------------------------

    def satisfiable(self, query, xors=(), node_budget=None) -> bool:
        return self.witness(query, xors, node_budget) is not None

    def witness(self, query, xors=(), node_budget=None):
        """One satisfying assignment, or None."""
        out = []
        self._search(query, xors, node_budget, limit=1, collect=out.append)
        if not out:
            return None
        return QuerySolution(out[0])

    def csp_query(self, query, var, node_budget=None):
        """All constants c such that query[var/c] is satisfiable."""
        variables = query.variables()
        if var not in variables:
            raise DomainError(f"variable {var} does not occur in the query")
        hits = []
        for c in self.index.constants:
            q = query.with_member(var, (c,))
            if self.satisfiable(q, query.xors, node_budget):
                hits.append(c)
        return set(hits)

    def solve_with_xor(self, query, xors, node_budget=None):
        """Satisfiability under parity rows; returns (bool, footprint|None)."""
        w = self.witness(query, xors, node_budget)
        if w is None:
            return False, None
        return True, w.footprint()

    def enumerate_assignments(self, query, xors=(), node_budget=None, limit=None):
        """All full assignments (lists of dicts); optionally capped."""
        out = []
        self._search(query, xors, node_budget, limit=limit, collect=out.append)
        return out

    def enumerate_footprints(
        self, query, xors=(), node_budget=None, distinct_limit=None,
        xor_mode="propagate",
    ):
        """Distinct value sets of solutions.

        Stops as soon as ``distinct_limit`` + 1 distinct sets were seen and
        returns (footprints, exhausted) where exhausted is False on early
        stop.  ``xor_mode='leaf'`` checks parity rows on complete
        assignments instead of propagating them; same result set, faster
        when cells are enumerated exhaustively.
        """
        seen = set()
        exhausted = True

        def collect(assignment):
            seen.add(frozenset(assignment.values()))
            if distinct_limit is not None and len(seen) > distinct_limit:
                raise _StopEnumeration

        try:
            self._search(query, xors, node_budget, limit=None, collect=collect,
                         xor_mode=xor_mode)
        except _StopEnumeration:
            exhausted = False
        return seen, exhausted

    # -- search core -------------------------------------------------------

    def _search(self, query, xors, node_budget, limit, collect,
                xor_mode="propagate"):
        idx = self.index
        variables = list(query.variables())
        nvars = len(variables)
        vid = {v: i for i, v in enumerate(variables)}
        xors = tuple(query.xors) + tuple(xors)

        # Positive atoms: (predicate, slots); slot = (is_var, var-id or cidx)
        pos_atoms = []
        for atom in query.atoms:
            slots = []
            for a in atom.args:
                if isinstance(a, Variable):
                    slots.append((True, vid[a]))
                else:
                    ci = idx.const_idx.get(a)
                    if ci is None:
                        return  # constant absent from the database
                    slots.append((False, ci))
            if atom.predicate not in idx.tuples:
                return
            pos_atoms.append((atom.predicate, tuple(slots)))
        neg_atoms = []
        for atom in query.negated:
            slots = []
            unknown_const = False
            for a in atom.args:
                if isinstance(a, Variable):
                    slots.append((True, vid[a]))
                else:
                    ci = idx.const_idx.get(a)
                    if ci is None:
                        unknown_const = True
                        break
                    slots.append((False, ci))
            if unknown_const or atom.predicate not in idx.tuples:
                continue  # vacuously absent
            neg_atoms.append((atom.predicate, tuple(slots)))

        # Atoms without variables are decided once, up front.
        for pred, slots in pos_atoms:
            if all(not is_var for is_var, _ in slots):
                if tuple(ci for _, ci in slots) not in idx.tuples[pred]:
                    return
        for pred, slots in neg_atoms:
            if all(not is_var for is_var, _ in slots):
                if tuple(ci for _, ci in slots) in idx.tuples[pred]:
                    return

        if nvars == 0:
            if self._xor_ground_ok(xors, frozenset()):
                collect({})
            return

        var_pos_atoms = [[] for _ in range(nvars)]
        for ai, (pred, slots) in enumerate(pos_atoms):
            for is_var, ref in slots:
                if is_var and ai not in var_pos_atoms[ref]:
                    var_pos_atoms[ref].append(ai)
        var_neg_atoms = [[] for _ in range(nvars)]
        for ai, (pred, slots) in enumerate(neg_atoms):
            for is_var, ref in slots:
                if is_var and ai not in var_neg_atoms[ref]:
                    var_neg_atoms[ref].append(ai)

        # Initial domains.
        domains = [idx.full_mask] * nvars
        for pred, slots in pos_atoms:
            for pos, (is_var, ref) in enumerate(slots):
                if is_var:
                    domains[ref] &= idx.pos_mask.get((pred, pos), 0)
        for var, allowed in query.member:
            mask = 0
            for c in allowed:
                ci = idx.const_idx.get(c)
                if ci is not None:
                    mask |= 1 << ci
            domains[vid[var]] &= mask
        if any(d == 0 for d in domains):
            return

        alldiff_ids = set(range(nvars)) if query.alldiff else set()
        card_k = None
        card_ids = ()
        if query.card:
            card_k, card_vars = query.card
            card_ids = tuple(vid[v] for v in card_vars)
            if card_k == len(card_ids):
                alldiff_ids.update(card_ids)
        chain = [vid[v] for v in query.ordered if v in vid]

        # Parity tableau.
        xor_masks = []
        xor_rhs = []
        for row in xors:
            mask = 0
            for c in row.constants:
                ci = idx.const_idx.get(c)
                if ci is not None:
                    mask |= 1 << ci
            rhs = 1 if row.parity else 0
            if mask == 0:
                if rhs:
                    return
                continue
            xor_masks.append(mask)
            xor_rhs.append(rhs)
        leaf_rows = ()
        if xor_masks and xor_mode == "leaf":
            leaf_rows = tuple(zip(xor_masks, xor_rhs))
            xor_masks, xor_rhs = [], []
        has_xor = bool(xor_masks)
        ind_state = [-1] * idx.n if has_xor else None  # -1 free / 0 / 1
        support_box = [idx.full_mask]  # constants assigned or in some open domain

        assignment = [-1] * nvars
        n_assigned = 0
        budget = node_budget
        nodes_start = self.nodes

        def xor_set(i_const, value, frame):
            """Decide an indicator; propagate units.  False on conflict."""
            pending = [(i_const, value)]
            while pending:
                ci, val = pending.pop()
                state = ind_state[ci]
                if state != -1:
                    if state != val:
                        return False
                    continue
                ind_state[ci] = val
                frame.ind_trail.append(ci)
                bit = 1 << ci
                if val == 0:
                    # Remove the constant from every open domain.
                    for u in range(nvars):
                        if assignment[u] == ci:
                            return False
                        if assignment[u] == -1 and domains[u] & bit:
                            frame.trail.append((u, domains[u]))
                            domains[u] &= ~bit
                            if domains[u] == 0:
                                return False
                for ri in range(len(xor_masks)):
                    if xor_masks[ri] & bit:
                        frame.row_trail.append(
                            (ri, xor_masks[ri], xor_rhs[ri])
                        )
                        xor_masks[ri] &= ~bit
                        if val:
                            xor_rhs[ri] ^= 1
                        m = xor_masks[ri]
                        if m == 0:
                            if xor_rhs[ri]:
                                return False
                        elif m & (m - 1) == 0:
                            pending.append((m.bit_length() - 1, xor_rhs[ri]))
            return True

        def xor_absence_pass(frame):
            """Indicators of constants that lost all support go to 0; loops
            because forcing an indicator may prune domains further."""
            while True:
                support = 0
                for u in range(nvars):
                    if assignment[u] == -1:
                        support |= domains[u]
                    else:
                        support |= 1 << assignment[u]
                newly_absent = support_box[0] & ~support
                support_box[0] = support
                if not newly_absent:
                    return True
                for ci in _bits(newly_absent):
                    state = ind_state[ci]
                    if state == 1:
                        return False
                    if state == -1 and not xor_set(ci, 0, frame):
                        return False

        def filter_atom(ai, frame, negated=False):
            """Prune open variable domains of one atom against the index."""
            pred, slots = (neg_atoms if negated else pos_atoms)[ai]
            fixed = []
            open_slots = []
            for pos, (is_var, ref) in enumerate(slots):
                if is_var and assignment[ref] == -1:
                    open_slots.append((pos, ref))
                else:
                    ci = assignment[ref] if is_var else ref
                    fixed.append((pos, ci))
            if not open_slots:
                present = tuple(
                    (assignment[ref] if is_var else ref) for is_var, ref in slots
                ) in idx.tuples[pred]
                return present != negated
            if negated:
                if len(open_slots) > 1:
                    return True  # checked once ground
                ref0 = open_slots[0][1]
                ref0_positions = [
                    p for p, (is_var, ref) in enumerate(slots)
                    if is_var and ref == ref0
                ]
                removed = 0
                for tup in self._candidates(pred, fixed):
                    if all(tup[p] == ci for p, ci in fixed):
                        vals = {tup[p] for p in ref0_positions}
                        if len(vals) == 1:
                            removed |= 1 << vals.pop()
                if removed & domains[ref0]:
                    frame.trail.append((ref0, domains[ref0]))
                    domains[ref0] &= ~removed
                    if domains[ref0] == 0:
                        return False
                return True
            allowed = {}
            for tup in self._candidates(pred, fixed):
                if any(tup[p] != ci for p, ci in fixed):
                    continue
                consistent = True
                bound = {}
                for p, (is_var, ref) in enumerate(slots):
                    if is_var and assignment[ref] == -1:
                        prev = bound.get(ref)
                        if prev is None:
                            bound[ref] = tup[p]
                        elif prev != tup[p]:
                            consistent = False
                            break
                if not consistent:
                    continue
                for ref, ci in bound.items():
                    allowed[ref] = allowed.get(ref, 0) | (1 << ci)
            for _, ref in open_slots:
                new = domains[ref] & allowed.get(ref, 0)
                if new != domains[ref]:
                    frame.trail.append((ref, domains[ref]))
                    domains[ref] = new
                    if new == 0:
                        return False
            return True

        def propagate(v, c, frame):
            bit = 1 << c
            if alldiff_ids and v in alldiff_ids:
                for u in alldiff_ids:
                    if u != v and assignment[u] == -1 and domains[u] & bit:
                        frame.trail.append((u, domains[u]))
                        domains[u] &= ~bit
                        if domains[u] == 0:
                            return False
            if chain:
                if v in chain:
                    i = chain.index(v)
                    for j, u in enumerate(chain):
                        if assignment[u] != -1:
                            continue
                        if j < i:
                            new = domains[u] & (bit - 1)
                        elif j > i:
                            new = domains[u] & ~((bit << 1) - 1)
                        else:
                            continue
                        if new != domains[u]:
                            frame.trail.append((u, domains[u]))
                            domains[u] = new
                            if new == 0:
                                return False
            if card_k is not None and card_k != len(card_ids):
                distinct = {assignment[u] for u in card_ids if assignment[u] != -1}
                if len(distinct) > card_k:
                    return False
                open_count = sum(1 for u in card_ids if assignment[u] == -1)
                if len(distinct) + open_count < card_k:
                    return False
            for ai in var_pos_atoms[v]:
                if not filter_atom(ai, frame):
                    return False
            for ai in var_neg_atoms[v]:
                if not filter_atom(ai, frame, negated=True):
                    return False
            if has_xor:
                if not xor_set(c, 1, frame):
                    return False
                if not xor_absence_pass(frame):
                    return False
            return True

        found = [0]

        def descend():
            nonlocal n_assigned
            if n_assigned == nvars:
                if card_k is not None and card_k != len(card_ids):
                    if len({assignment[u] for u in card_ids}) != card_k:
                        return
                if has_xor and any(
                    m == 0 and r for m, r in zip(xor_masks, xor_rhs)
                ):
                    return
                if leaf_rows:
                    fp = 0
                    for u in range(nvars):
                        fp |= 1 << assignment[u]
                    for m, r in leaf_rows:
                        if (m & fp).bit_count() & 1 != r:
                            return
                collect(
                    {
                        variables[i]: idx.constants[assignment[i]]
                        for i in range(nvars)
                    }
                )
                found[0] += 1
                if limit is not None and found[0] >= limit:
                    raise _StopEnumeration
                return
            best = -1
            best_pc = None
            for u in range(nvars):
                if assignment[u] == -1:
                    pc = domains[u].bit_count()
                    if pc == 0:
                        return
                    if best_pc is None or pc < best_pc:
                        best, best_pc = u, pc
            v = best
            saved_dom = domains[v]
            for c in _bits(saved_dom):
                self.nodes += 1
                if budget is not None and self.nodes - nodes_start > budget:
                    raise BudgetExhausted(
                        "matcher node budget exhausted",
                        partial={"nodes": self.nodes - nodes_start,
                                 "solutions": found[0]},
                    )
                frame = _Frame()
                frame.support = support_box[0]
                assignment[v] = c
                frame.trail.append((v, saved_dom))
                domains[v] = 1 << c
                n_assigned += 1
                if propagate(v, c, frame):
                    descend()
                n_assigned -= 1
                assignment[v] = -1
                for u, old in reversed(frame.trail):
                    domains[u] = old
                if has_xor:
                    for ri, m, r in reversed(frame.row_trail):
                        xor_masks[ri] = m
                        xor_rhs[ri] = r
                    for ci in frame.ind_trail:
                        ind_state[ci] = -1
                    support_box[0] = frame.support

        try:
            if has_xor:
                root = _Frame()
                root.support = support_box[0]
                if not xor_absence_pass(root):
                    return
            descend()
        except _StopEnumeration:
            if limit is None:
                raise

    def _candidates(self, pred, fixed):
        idx = self.index
        if not fixed:
            return idx.tuples[pred]
        best = None
        for pos, ci in fixed:
            lst = idx.by_slot.get((pred, pos, ci))
            if lst is None:
                return ()
            if best is None or len(lst) < len(best):
                best = lst
        return best

    def _xor_ground_ok(self, xors, footprint):
        for row in xors:
            parity = sum(1 for c in row.constants if c in footprint) & 1
            if parity != (1 if row.parity else 0):
                return False
        return True


class _StopEnumeration(Exception):
    pass


# ---------------------------------------------------------------------------
# Module-level convenience wrappers


def satisfiable(query, example, xors=()) -> bool:
    return Matcher(example).satisfiable(query, xors)


def csp_query(query, var, example):
    return Matcher(example).csp_query(query, var)


def solve_with_xor(query, example, xors):
    return Matcher(example).solve_with_xor(query, xors)


def negation_query(clause) -> ConjunctiveQuery:
    """The counterexample query of a clause: a grounding falsifying every
    literal.  Positive literals must be absent (closed world), negative
    ones present; alldiff carries over."""
    pos = tuple(
        lit.atom for lit in sorted(clause.literals, key=str) if not lit.positive
    )
    neg = tuple(
        lit.atom for lit in sorted(clause.literals, key=str) if lit.positive
    )
    return ConjunctiveQuery(atoms=pos, negated=neg, alldiff=clause.alldiff)
