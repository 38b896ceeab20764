"""Counting toolkit: matching-subset counting over a relational database
(exact enumeration two ways, sampling with confidence intervals, and
(eps, delta)-approximate counting by XOR partitioning of the subset
space), plus model counting for clause theories over width-k worlds.

The tiered dispatcher tries, in order: the exact method under a small
work limit, the sampling estimator, the exact method under a larger
limit, and finally the XOR-based approximate counter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .csp import ConjunctiveQuery, Matcher, XorConstraint, negation_query
from .errors import BudgetExhausted, DomainError
from .logic import Variable, constant_key
from .sat import GroundCNF, count_models, enumerate_full_models, ground_to_cnf, signature_atoms

_Z95 = 1.959963984540054


@dataclass(frozen=True)
class CountReport:
    value: float
    method: str                      # exact-naive | exact-alg1 | sampled | xor-approx
    epsilon: float | None = None
    delta: float | None = None
    ci: tuple | None = None
    seed: int | None = None

    def line(self) -> str:
        parts = [self.method, repr(float(self.value))]
        if self.ci is not None:
            parts += [repr(float(self.ci[0])), repr(float(self.ci[1]))]
        if self.seed is not None:
            parts.append(str(self.seed))
        return " ".join(parts)

    @property
    def rel_ci_width(self):
        if self.ci is None or self.value <= 0:
            return math.inf
        return (self.ci[1] - self.ci[0]) / self.value


@dataclass(frozen=True)
class CountingPolicy:
    exact_limit_small: int = 20_000
    exact_limit_large: int = 400_000
    ci_rel_width_threshold: float = 0.2
    epsilon: float = 0.8
    delta: float = 0.2
    sample_budget: int = 200
    model_exact_atoms: int = 24

    def __post_init__(self):
        if min(self.exact_limit_small, self.exact_limit_large,
               self.sample_budget) <= 0:
            raise ValueError("budgets must be positive")
        if not 0 < self.ci_rel_width_threshold < 1:
            raise ValueError("ci_rel_width_threshold must be in (0,1)")


DEFAULT_POLICY = CountingPolicy()


# ---------------------------------------------------------------------------
# k-extension


def k_extension(query: ConjunctiveQuery, k: int) -> ConjunctiveQuery:
    """Pad the query with k - m fresh variables and constrain all k
    variables to take pairwise-distinct values (card k).

    The fresh variables additionally carry an ascending-order constraint;
    they are interchangeable, so this only removes permuted duplicates of
    each solution, never a footprint.
    """
    if query.card is not None:
        raise DomainError("query is already a k-extension")
    variables = query.variables()
    m = len(variables)
    if m > k:
        raise DomainError(f"query has {m} variables, more than k={k}")
    taken = {v.name for v in variables}
    fresh = []
    i = 1
    while len(fresh) < k - m:
        name = f"_P{i}"
        if name not in taken:
            fresh.append(Variable(name))
        i += 1
    return ConjunctiveQuery(
        atoms=query.atoms,
        negated=query.negated,
        alldiff=query.alldiff,
        card=(k, tuple(variables) + tuple(fresh)),
        member=query.member,
        ordered=tuple(fresh),
        xors=query.xors,
    )


# ---------------------------------------------------------------------------
# Exact matching-subset enumeration


def matching_subsets_naive(example, query: ConjunctiveQuery, k: int,
                           node_budget=None):
    """All k-subsets whose fragment satisfies the (k-extended) query, by
    full solution enumeration collapsed to value sets."""
    query = _require_extension(query, k)
    matcher = Matcher(example)
    footprints, _ = matcher.enumerate_footprints(query, node_budget=node_budget)
    return footprints


@dataclass
class Alg1Stats:
    partial_sets: int = 0
    productions: int = 0
    csp_nodes: int = 0


def matching_subsets_alg1(example, query: ConjunctiveQuery, k: int,
                          node_budget=None, stats: Alg1Stats | None = None):
    """Iterative subset construction: grow partial constant sets one
    variable at a time, querying candidate values under membership
    constraints that confine earlier variables to the partial set."""
    query = _require_extension(query, k)
    matcher = Matcher(example)
    variables = query.variables()
    current = {frozenset()}
    nodes_before = matcher.nodes
    for i, var in enumerate(variables):
        nxt = set()
        for subset in current:
            restricted = query
            for prev in variables[:i]:
                restricted = restricted.with_member(prev, subset)
            remaining = (
                None if node_budget is None
                else node_budget - (matcher.nodes - nodes_before)
            )
            values = matcher.csp_query(restricted, var, node_budget=remaining)
            if stats is not None:
                stats.productions += len(values)
            for c in values:
                nxt.add(subset | {c})
        current = nxt
        if stats is not None:
            stats.partial_sets += len(current)
        if not current:
            break
    if stats is not None:
        stats.csp_nodes += matcher.nodes - nodes_before
    return current


def _require_extension(query, k):
    if query.card is None:
        return k_extension(query, k)
    if query.card[0] != k:
        raise DomainError("query extension width disagrees with k")
    return query


# ---------------------------------------------------------------------------
# Sampling estimator


def wilson_interval(hits, n, z=_Z95):
    if n == 0:
        return 0.0, 1.0
    phat = hits / n
    denom = 1 + z * z / n
    center = (phat + z * z / (2 * n)) / denom
    half = (z / denom) * math.sqrt(phat * (1 - phat) / n + z * z / (4 * n * n))
    return max(0.0, center - half), min(1.0, center + half)


def count_sampled(example, query: ConjunctiveQuery, k: int, policy, rng,
                  subset_test=None) -> CountReport:
    """Estimate the matching-subset count from uniform k-subsets; Wilson
    95% interval scaled by C(|C|, k)."""
    consts = example.sorted_constants()
    total = math.comb(len(consts), k)
    if subset_test is None:
        base = _require_extension(query, k)
        matcher = Matcher(example)

        def subset_test(subset):
            restricted = base
            for v in base.variables():
                restricted = restricted.with_member(v, subset)
            return matcher.satisfiable(restricted)

    hits = 0
    n = policy.sample_budget
    for _ in range(n):
        subset = frozenset(rng.sample(consts, k))
        if subset_test(subset):
            hits += 1
    lo, hi = wilson_interval(hits, n)
    return CountReport(
        value=hits / n * total,
        method="sampled",
        ci=(lo * total, hi * total),
    )


# ---------------------------------------------------------------------------
# ApproxMC2-style approximate counting


def _pivot(epsilon, policy):
    p = math.ceil(9.84 * (1 + epsilon / (1 + epsilon)) * (1 + 1 / epsilon) ** 2)
    return min(p, 2 * policy.exact_limit_small)


def _rounds(delta):
    r = math.ceil(math.log2(3 / delta))
    return r if r % 2 == 1 else r + 1


def approxmc_core(n_indicators, bounded_count, epsilon, delta, rng, policy):
    """Generic (eps, delta) counter over 2**n_indicators candidate vectors.

    ``bounded_count(rows, limit)`` returns the number of solutions in the
    cell carved by the parity ``rows``, early-stopping above ``limit``.
    """
    pivot = _pivot(epsilon, policy)
    initial = bounded_count((), pivot + 1)
    if initial <= pivot:
        return float(initial)
    if n_indicators <= 1:
        return float(initial)
    estimates = []
    prev_m = 1
    n_rows = n_indicators - 1
    for _ in range(_rounds(delta)):
        rows = [
            (rng.getrandbits(n_indicators), rng.getrandbits(1))
            for _ in range(n_rows)
        ]
        memo = {0: initial}

        def cells(m):
            if m not in memo:
                memo[m] = bounded_count(rows[:m], pivot + 1)
            return memo[m]

        # Smallest m with cells(m) <= pivot.  Cells are nested along the
        # row prefix, so the predicate is monotone in m.  Probes in the
        # crowded region stop early at pivot + 1 and are cheap; gallop up
        # through them from the previous round's answer, then bisect.
        lo, hi = 0, None
        probe = min(max(prev_m, 1), n_rows)
        while hi is None:
            if cells(probe) <= pivot:
                hi = probe
            elif probe >= n_rows:
                break
            else:
                lo = probe
                probe = min(n_rows, probe * 2)
        if hi is None:
            continue  # even the full prefix leaves a crowded cell
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if cells(mid) <= pivot:
                hi = mid
            else:
                lo = mid
        m_star = hi
        count = cells(m_star)
        if count == 0:
            continue  # unlucky hash: the isolating cell is empty
        estimates.append(count * (2 ** m_star))
        prev_m = m_star
    if not estimates:
        return float(pivot)
    estimates.sort()
    return float(estimates[len(estimates) // 2])


def _subset_rows(example, rows):
    consts = example.sorted_constants()
    out = []
    for mask, parity in rows:
        chosen = frozenset(
            c for i, c in enumerate(consts) if (mask >> i) & 1
        )
        out.append(XorConstraint(chosen, bool(parity)))
    return tuple(out)


def count_xor_approx(example, query: ConjunctiveQuery, k: int, epsilon, delta,
                     rng, policy=DEFAULT_POLICY, node_budget=None) -> CountReport:
    """Approximate matching-subset count with multiplicative guarantee
    target (1+eps) at confidence 1-delta, via random parity constraints
    over constant indicators."""
    base = _require_extension(query, k)
    matcher = Matcher(example)

    def bounded(rows, limit):
        fs, exhausted = matcher.enumerate_footprints(
            base,
            xors=_subset_rows(example, rows),
            node_budget=node_budget,
            distinct_limit=limit,
            xor_mode="leaf",
        )
        return len(fs)

    value = approxmc_core(
        len(example.constants), bounded, epsilon, delta, rng, policy
    )
    return CountReport(value=value, method="xor-approx",
                       epsilon=epsilon, delta=delta)


def count_xor_union(example, queries, k, epsilon, delta, rng,
                    policy=DEFAULT_POLICY, node_budget=None) -> CountReport:
    """Approximate size of the union of matching-subset sets of several
    queries, sharing one indicator space."""
    bases = [_require_extension(q, k) for q in queries]
    matcher = Matcher(example)

    def bounded(rows, limit):
        xors = _subset_rows(example, rows)
        seen = set()
        for base in bases:
            fs, _ = matcher.enumerate_footprints(
                base, xors=xors, node_budget=node_budget,
                distinct_limit=limit, xor_mode="leaf",
            )
            seen.update(fs)
            if len(seen) > limit:
                break
        return len(seen)

    value = approxmc_core(
        len(example.constants), bounded, epsilon, delta, rng, policy
    )
    return CountReport(value=value, method="xor-approx",
                       epsilon=epsilon, delta=delta)


# ---------------------------------------------------------------------------
# Model counting over width-k worlds


def _atom_rows(atom_count, rows):
    return [(mask & ((1 << atom_count) - 1), rhs) for mask, rhs in rows]


def model_count(formulas, k, signature, mode="ground", epsilon=0.8, delta=0.2,
                rng=None, policy=DEFAULT_POLICY, node_budget=None) -> CountReport:
    """Number of width-k worlds satisfying every grounding of every
    formula.  Exact while the ground-atom count stays within the policy
    ceiling, XOR-approximate above it.

    ``mode='cutting-plane'`` grounds lazily inside each bounded decision,
    adding only violated rule instances; both modes agree.
    """
    from .data import canonical_constants

    for f in formulas:
        if len(f.variables()) > k:
            raise DomainError(f"formula {f} has more than k={k} variables")
    constants = set(canonical_constants(k))
    atoms = signature_atoms(signature, constants)
    n_atoms = len(atoms)

    def bounded(rows, limit):
        xor = _atom_rows(n_atoms, rows)
        if mode == "ground":
            cnf = ground_to_cnf(formulas, constants, extra_atoms=atoms)
            return count_models(cnf, xor_rows=xor, limit=limit,
                                node_budget=node_budget)
        cnf = GroundCNF()
        for a in atoms:
            cnf.var(a)
        ground_formulas = {f for f in formulas if not f.variables()}
        for g in sorted(ground_formulas, key=str):
            cnf.add_ground_clause(g)
        lazy = {f for f in formulas if f.variables()}
        models, exhausted = enumerate_full_models(
            cnf, limit=limit, xor_rows=xor, lazy=lazy,
            constants=constants, node_budget=node_budget,
        )
        return len(models) if exhausted else limit + 1

    if mode not in ("ground", "cutting-plane"):
        raise DomainError(f"unknown model counting mode {mode!r}")

    if n_atoms <= policy.model_exact_atoms:
        value = bounded((), None if mode == "ground" else (1 << n_atoms))
        return CountReport(value=float(value), method="exact-naive")
    if rng is None:
        raise DomainError(
            f"{n_atoms} ground atoms exceed the exact ceiling; an rng is "
            "required for approximate counting"
        )
    value = approxmc_core(n_atoms, bounded, epsilon, delta, rng, policy)
    return CountReport(value=value, method="xor-approx",
                       epsilon=epsilon, delta=delta)


# ---------------------------------------------------------------------------
# Counting tasks and the tiered dispatcher


@dataclass(frozen=True)
class SubsetCountTask:
    """Count k-subsets whose fragment satisfies a conjunctive query."""
    example: object
    query: ConjunctiveQuery
    k: int


@dataclass(frozen=True)
class CutCountTask:
    """Count k-subsets whose fragment satisfies every clause of a theory
    cut (universally quantified; counted via the violating complement)."""
    example: object
    clauses: frozenset
    k: int


@dataclass(frozen=True)
class ModelCountTask:
    clauses: frozenset
    signature: frozenset
    k: int
    mode: str = "ground"


def fragment_satisfies(example, clauses, subset, matcher=None) -> bool:
    """Closed-world check that the fragment over ``subset`` satisfies every
    clause (no violating grounding within the subset)."""
    if matcher is None:
        matcher = Matcher(example)
    for clause in clauses:
        q = negation_query(clause)
        for v in q.variables():
            q = q.with_member(v, subset)
        if matcher.satisfiable(q):
            return False
    return True


def count_dispatch(task, policy=DEFAULT_POLICY, rng=None) -> CountReport:
    """Four-tier strategy: exact (small limit), sampling, exact (large
    limit), XOR-approximate.  The report records which tier answered."""
    tiers = [
        ("exact", policy.exact_limit_small),
        ("sampled", None),
        ("exact", policy.exact_limit_large),
        ("xor", None),
    ]
    failures = []
    for tier, limit in tiers:
        try:
            if tier == "exact":
                report = _exact_tier(task, limit, policy)
            elif tier == "sampled":
                if rng is None:
                    raise BudgetExhausted("sampling tier needs an rng")
                report = _sampling_tier(task, policy, rng)
                if report.rel_ci_width > policy.ci_rel_width_threshold:
                    raise BudgetExhausted(
                        f"confidence interval too wide "
                        f"({report.rel_ci_width:.3f})"
                    )
            else:
                if rng is None:
                    raise BudgetExhausted("approximate tier needs an rng")
                report = _xor_tier(task, policy, rng)
            return report
        except BudgetExhausted as exc:
            failures.append(f"{tier}: {exc}")
    raise BudgetExhausted(
        "all counting tiers failed: " + "; ".join(failures)
    )


def _exact_tier(task, node_budget, policy):
    if isinstance(task, SubsetCountTask):
        subsets = matching_subsets_alg1(
            task.example, task.query, task.k, node_budget=node_budget
        )
        return CountReport(value=float(len(subsets)), method="exact-alg1")
    if isinstance(task, CutCountTask):
        consts = task.example.sorted_constants()
        total = math.comb(len(consts), task.k)
        if any(c.is_bottom for c in task.clauses):
            return CountReport(value=0.0, method="exact-naive")
        if total <= node_budget:
            import itertools as _it

            matcher = Matcher(task.example)
            hits = sum(
                1
                for subset in _it.combinations(consts, task.k)
                if fragment_satisfies(
                    task.example, task.clauses, frozenset(subset), matcher
                )
            )
            return CountReport(value=float(hits), method="exact-naive")
        violating = set()
        remaining = node_budget
        for clause in sorted(task.clauses, key=str):
            stats = Alg1Stats()
            violating |= matching_subsets_alg1(
                task.example, negation_query(clause), task.k,
                node_budget=remaining, stats=stats,
            )
            remaining -= stats.csp_nodes
            if remaining <= 0:
                raise BudgetExhausted("violation enumeration budget exhausted")
        return CountReport(value=float(total - len(violating)),
                           method="exact-alg1")
    if isinstance(task, ModelCountTask):
        return model_count(
            task.clauses, task.k, task.signature, mode=task.mode,
            policy=policy, node_budget=node_budget,
        )
    raise DomainError(f"unknown counting task {task!r}")


def _sampling_tier(task, policy, rng):
    if isinstance(task, SubsetCountTask):
        return count_sampled(task.example, task.query, task.k, policy, rng)
    if isinstance(task, CutCountTask):
        matcher = Matcher(task.example)
        return count_sampled(
            task.example, None, task.k, policy, rng,
            subset_test=lambda s: fragment_satisfies(
                task.example, task.clauses, s, matcher
            ),
        )
    if isinstance(task, ModelCountTask):
        from .data import canonical_constants

        constants = set(canonical_constants(task.k))
        atoms = signature_atoms(task.signature, constants)
        cnf = ground_to_cnf(task.clauses, constants, extra_atoms=atoms)
        clauses = cnf.clauses
        n = cnf.nvars
        hits = 0
        budget = policy.sample_budget
        for _ in range(budget):
            bits = rng.getrandbits(n) if n else 0
            ok = all(
                any(
                    ((bits >> (abs(l) - 1)) & 1) == (1 if l > 0 else 0)
                    for l in c
                )
                for c in clauses
            )
            if ok:
                hits += 1
        lo, hi = wilson_interval(hits, budget)
        scale = float(2 ** n)
        return CountReport(value=hits / budget * scale, method="sampled",
                           ci=(lo * scale, hi * scale))
    raise DomainError(f"unknown counting task {task!r}")


def _xor_tier(task, policy, rng):
    if isinstance(task, SubsetCountTask):
        return count_xor_approx(
            task.example, task.query, task.k, policy.epsilon, policy.delta,
            rng, policy, node_budget=policy.exact_limit_large,
        )
    if isinstance(task, CutCountTask):
        consts = task.example.sorted_constants()
        total = math.comb(len(consts), task.k)
        if any(c.is_bottom for c in task.clauses):
            return CountReport(value=0.0, method="exact-naive")
        queries = [negation_query(c) for c in sorted(task.clauses, key=str)]
        if not queries:
            return CountReport(value=float(total), method="exact-naive")
        union = count_xor_union(
            task.example, queries, task.k, policy.epsilon, policy.delta,
            rng, policy, node_budget=policy.exact_limit_large,
        )
        return CountReport(
            value=max(0.0, total - union.value), method="xor-approx",
            epsilon=policy.epsilon, delta=policy.delta,
        )
    if isinstance(task, ModelCountTask):
        return model_count(
            task.clauses, task.k, task.signature, mode=task.mode,
            epsilon=policy.epsilon, delta=policy.delta, rng=rng,
            policy=CountingPolicy(
                exact_limit_small=policy.exact_limit_small,
                exact_limit_large=policy.exact_limit_large,
                ci_rel_width_threshold=policy.ci_rel_width_threshold,
                epsilon=policy.epsilon,
                delta=policy.delta,
                sample_budget=policy.sample_budget,
                model_exact_atoms=0,
            ),
            node_budget=policy.exact_limit_large,
        )
    raise DomainError(f"unknown counting task {task!r}")
