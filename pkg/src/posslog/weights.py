"""Weight learning: stratum parameter estimation (counts of satisfying
fragments and of satisfying width-k worlds per theory cut), the
maximum-likelihood program solved in log-space by projected gradient
ascent with a barrier on the normalization constraint, greedy ordering
search with per-cut caching, and entailment-based theory simplification.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .counting import CutCountTask, ModelCountTask, count_dispatch, DEFAULT_POLICY
from .errors import BudgetExhausted, DomainError, InfeasibleError
from .logic import BOTTOM, Clause, HornRule, clause_sort_key
from .possibilistic import HARD_LEVEL, StratifiedTheory, WeightedFormula
from . import sat
from .data import canonical_constants

log = logging.getLogger(__name__)

# Learned weights stay strictly below the hard level; the gap clears the
# stratum-merge epsilon so a maximally confident soft rule never joins the
# hard stratum.
_LAMBDA_CEIL = 1.0 - 1e-6
_MIN_GAIN = 1e-9


@dataclass(frozen=True)
class StratumParams:
    """Counts for an ordering (bottom, a2, ..., an): e_counts[i] and
    m_counts[i] are the data-fragment and world counts satisfying the cut
    from formula i+1 upward (0-based); index n holds the boundary counts
    of the hard context alone."""

    ordering: tuple
    e_counts: tuple
    m_counts: tuple
    methods: tuple

    def __post_init__(self):
        n = len(self.ordering)
        if len(self.e_counts) != n + 1 or len(self.m_counts) != n + 1:
            raise DomainError("counts must have length n + 1")
        if any(b < a - 1e-9 for a, b in zip(self.e_counts, self.e_counts[1:])):
            raise DomainError("e_counts must be non-decreasing")
        if any(b < a - 1e-9 for a, b in zip(self.m_counts, self.m_counts[1:])):
            raise DomainError("m_counts must be non-decreasing")


@dataclass(frozen=True)
class GPSolution:
    lambdas: tuple
    log_likelihood: float
    converged: bool
    residuals: dict


class CutCountCache:
    """Cut-signature keyed cache shared across greedy iterations."""

    def __init__(self):
        self.store = {}
        self.hits = 0
        self.misses = 0

    def get(self, kind, cut_key, compute):
        key = (kind, cut_key)
        if key in self.store:
            self.hits += 1
            return self.store[key]
        self.misses += 1
        value = compute()
        self.store[key] = value
        return value


def _cut_key(clauses):
    return frozenset(c.canonical_form() for c in clauses)


def estimate_params(ordering, example, k, policy=DEFAULT_POLICY, rng=None,
                    hard=(), cache=None) -> StratumParams:
    """e and m counts for every cut of the ordering; the hard rules are
    conjoined into every cut.  Counts go through the tiered dispatcher
    (exact at desk scale) and are cached per cut signature."""
    if not ordering or not ordering[0].is_bottom:
        raise DomainError("ordering must start with the bottom formula")
    if cache is None:
        cache = CutCountCache()
    hard = tuple(sorted(hard, key=clause_sort_key))
    n = len(ordering)
    e_counts = []
    m_counts = []
    methods = []
    for i in range(n + 1):
        cut = frozenset(ordering[i:]) | frozenset(hard)
        key = _cut_key(cut)
        if i == 0:
            # The bottom formula is unsatisfiable: both counts vanish.
            e_counts.append(0.0)
            m_counts.append(0.0)
            methods.append(("bottom", "bottom"))
            continue
        e_rep = cache.get(
            "e", key,
            lambda cut=cut: count_dispatch(
                CutCountTask(example, cut, k), policy, rng
            ),
        )
        m_rep = cache.get(
            "m", key,
            lambda cut=cut: count_dispatch(
                ModelCountTask(cut, frozenset(example.signature), k), policy, rng
            ),
        )
        e_counts.append(float(e_rep.value))
        m_counts.append(float(m_rep.value))
        methods.append((e_rep.method, m_rep.method))
    # Approximate tiers may wobble; restore monotonicity.
    for i in range(1, n + 1):
        e_counts[i] = max(e_counts[i], e_counts[i - 1])
        m_counts[i] = max(m_counts[i], m_counts[i - 1])
    return StratumParams(tuple(ordering), tuple(e_counts), tuple(m_counts),
                         tuple(methods))


# ---------------------------------------------------------------------------
# The maximum-likelihood program
#
# Maximize sum_i d_i * u_i  over u_i = log(1 - lambda_i) subject to
#   u_1 >= u_2 >= ... >= u_n   (weights non-decreasing)
#   sum_i w_i * exp(u_i) = 1   (world probabilities sum to one)
# with d_i = e_{i+1} - e_i and w_i = m_{i+1} - m_i.


def _pava_decreasing(x, weights=None):
    """Pool-adjacent-violators projection onto non-increasing sequences."""
    if weights is None:
        weights = np.ones(len(x))
    values = []
    wsum = []
    sizes = []
    for xi, wi in zip(x, weights):
        values.append(float(xi))
        wsum.append(float(wi))
        sizes.append(1)
        while len(values) > 1 and values[-2] < values[-1]:
            pooled = (values[-1] * wsum[-1] + values[-2] * wsum[-2]) / (
                wsum[-1] + wsum[-2]
            )
            values.pop()
            w_last = wsum.pop()
            s_last = sizes.pop()
            values[-1] = pooled
            wsum[-1] += w_last
            sizes[-1] += s_last
    expanded = []
    for v, s in zip(values, sizes):
        expanded.extend([v] * s)
    return np.array(expanded)


def _project(u, floor):
    """Projection onto {non-increasing} intersected with [floor, 0]."""
    v = _pava_decreasing(np.asarray(u, dtype=float))
    return np.clip(v, floor, 0.0)


def _band_optimum(d, w, q_floor):
    """Exact maximizer of sum d_i log q_i under sum w_i q_i = 1, q
    non-increasing: weighted isotonic regression of the band frequencies
    d_i / w_i, scaled by the total data mass.  Bands with no worlds
    inherit the value of the block to their right."""
    n = len(d)
    total = d.sum()
    r = np.empty(n)
    wts = np.empty(n)
    for i in range(n):
        if w[i] > 0:
            r[i] = d[i] / w[i]
            wts[i] = w[i]
        else:
            r[i] = 0.0      # placeholder, patched after pooling
            wts[i] = 0.0
    # Weighted PAVA over positive-weight entries only.
    order = [i for i in range(n) if wts[i] > 0]
    if not order:
        return np.full(n, 1.0 / max(1.0, float(n)))
    pooled = _pava_decreasing(r[order], wts[order])
    q = np.empty(n)
    for pos, i in enumerate(order):
        q[i] = pooled[pos] / total if total > 0 else 1.0
    # Zero-world bands copy the right positive-weight neighbor (or the
    # left one at the tail), keeping monotonicity without moving mass.
    for i in range(n - 1, -1, -1):
        if wts[i] == 0:
            right = next((q[j] for j in range(i + 1, n) if wts[j] > 0), None)
            q[i] = right if right is not None else q_floor
    for i in range(n - 2, -1, -1):
        q[i] = max(q[i], q[i + 1])
    # Cap at one (weight floor zero): fix saturated blocks, re-solve rest.
    for _ in range(n):
        over = q > 1.0
        if not over.any():
            break
        q[over] = 1.0
        budget = 1.0 - float(np.dot(w[over], np.ones(over.sum())))
        rest = ~over & (wts > 0)
        if budget <= 0 or not rest.any():
            q[rest] = q_floor
            break
        sub_total = d[rest].sum()
        if sub_total <= 0:
            q[rest] = np.minimum(budget / max(w[rest].sum(), 1.0), 1.0)
            continue
        pooled = _pava_decreasing((d[rest] / w[rest]), w[rest])
        q[rest] = pooled * (budget / sub_total)
    return np.clip(q, q_floor, 1.0)


def solve_gp(params: StratumParams, tol=1e-8, max_iter=100_000) -> GPSolution:
    """Log-space solution: the exact band optimum (isotonic regression)
    polished by projected gradient ascent with a shrinking barrier on the
    normalization constraint; the better of the two is returned."""
    n = len(params.ordering)
    d = np.diff(np.asarray(params.e_counts, dtype=float))
    w = np.diff(np.asarray(params.m_counts, dtype=float))
    if params.m_counts[n] <= 0:
        raise InfeasibleError("no worlds satisfy the hard context")
    floor = math.log(1.0 - _LAMBDA_CEIL)

    def g(u):
        return float(np.dot(w, np.exp(u)))

    def normalized_ll(u):
        s = g(u)
        if s > 0:
            shift = math.log(s)
            if float(np.max(u)) - shift <= 1e-15:
                u = u - shift
        return u, float(np.dot(d, u))

    q0 = _band_optimum(d, w, 1.0 - _LAMBDA_CEIL)
    u_exact = _project(np.log(q0), floor)
    u_exact, ll_exact = normalized_ll(u_exact)

    # Barrier polish per the projected-gradient design; harmless when the
    # closed form is already optimal, a safety net when clipping bit.
    u = np.minimum(u_exact + math.log(0.999), 0.0)
    iters = 0
    phase_cap = max(50, min(max_iter // 4, 400))
    for tau in (1e-3, 1e-6, 1e-9, 1e-12):
        step = 1.0
        for _ in range(phase_cap):
            iters += 1
            slack = 1.0 - g(u)
            if slack <= 0:
                u = u + math.log(0.999)
                slack = 1.0 - g(u)
            grad = d - tau * w * np.exp(u) / slack
            phi_old = float(np.dot(d, u)) + tau * math.log(slack)
            moved = _project(u + step * grad, floor)
            ok = False
            for _ in range(60):
                if g(moved) < 1.0:
                    phi_new = float(np.dot(d, moved)) + tau * math.log(
                        1.0 - g(moved)
                    )
                    if phi_new >= phi_old - 1e-15:
                        ok = True
                        break
                step *= 0.5
                moved = _project(u + step * grad, floor)
            if not ok:
                break
            delta = float(np.max(np.abs(moved - u)))
            u = moved
            step = min(step * 2.0, 1e6)
            if delta < max(tau * 1e-3, 1e-12):
                break
    u, ll = normalized_ll(u)
    if ll_exact >= ll or abs(g(u_exact) - 1.0) < abs(g(u) - 1.0) * 0.1:
        u, ll = u_exact, ll_exact

    norm_residual = abs(g(u) - 1.0)
    lambdas = tuple(float(min(max(1.0 - math.exp(x), 0.0), _LAMBDA_CEIL))
                    for x in u)
    stationarity = float(
        np.max(np.abs(_project(u + 1e-6 * d, floor) - u)) / 1e-6
    ) if n else 0.0
    converged = norm_residual < 1e-6
    return GPSolution(lambdas, ll, converged,
                      {"normalization": norm_residual,
                       "stationarity": stationarity,
                       "iterations": iters})


def grid_search_gp(params: StratumParams, step=1e-3):
    """Brute-force oracle for small instances: grid the first n-1 weights,
    solve the last from the normalization constraint, keep the feasible
    maximum.  Vectorized; supports n in {1, 2, 3}."""
    n = len(params.ordering)
    d = np.diff(np.asarray(params.e_counts, dtype=float))
    w = np.diff(np.asarray(params.m_counts, dtype=float))
    grid = np.arange(0.0, 1.0, step)
    if n == 1:
        free = np.zeros((1, 0))
    elif n == 2:
        free = grid[:, None]
    elif n == 3:
        a, b = np.meshgrid(grid, grid, indexing="ij")
        free = np.stack([a.ravel(), b.ravel()], axis=1)
    else:
        raise DomainError("grid oracle supports at most 3 formulas")

    acc = (w[: n - 1] * (1.0 - free)).sum(axis=1)
    if w[n - 1] > 0:
        last = 1.0 - (1.0 - acc) / w[n - 1]
    else:
        last = free[:, -1] if n > 1 else np.zeros(len(free))
    lam = np.concatenate([free, last[:, None]], axis=1)
    feasible = np.all((lam >= 0.0) & (lam < 1.0), axis=1)
    if n > 1:
        feasible &= np.all(np.diff(lam, axis=1) >= -1e-12, axis=1)
    if w[n - 1] <= 0:
        feasible &= np.abs(acc - 1.0) <= 1e-9
    if not feasible.any():
        return -math.inf, None
    lam = lam[feasible]
    with np.errstate(divide="ignore"):
        logs = np.where(lam < 1.0, np.log(np.maximum(1.0 - lam, 1e-300)), -np.inf)
    ll = logs @ d
    best = int(np.argmax(ll))
    return float(ll[best]), tuple(float(x) for x in lam[best])


# ---------------------------------------------------------------------------
# Greedy ordering construction


def greedy_build(candidates, hard, example, k, policy=DEFAULT_POLICY,
                 rng=None, passes=1, min_gain=_MIN_GAIN):
    """Insert candidate rules one at a time at the likelihood-maximizing
    position, keeping an insertion only when it strictly improves; hard
    rules stay fixed at level one and enter every cut.  Returns the
    weighted theory and a log of decisions."""
    cache = CutCountCache()
    hard = tuple(sorted(hard, key=clause_sort_key))
    soft: list = []
    log_lines = []

    def evaluate(ordering_soft):
        params = estimate_params([BOTTOM] + ordering_soft, example, k,
                                 policy, rng, hard, cache)
        return params, solve_gp(params)

    params, best_sol = evaluate(soft)
    current_ll = best_sol.log_likelihood

    ordered_candidates = []
    seen = set()
    for cand in candidates:
        clause = (cand.rule.to_clause() if hasattr(cand, "rule")
                  else cand).rename_canonically()
        score = getattr(cand, "accuracy", 0.0)
        if clause.canonical_form() in seen:
            continue
        seen.add(clause.canonical_form())
        ordered_candidates.append((clause, score))
    ordered_candidates.sort(key=lambda cs: (-cs[1], cs[0].canonical_form()))

    for _ in range(passes):
        improved_any = False
        for clause, score in ordered_candidates:
            if clause in soft:
                continue
            best = None
            for pos in range(len(soft) + 1):
                trial = soft[:pos] + [clause] + soft[pos:]
                try:
                    t_params, t_sol = evaluate(trial)
                except (InfeasibleError, BudgetExhausted) as exc:
                    log_lines.append(
                        f"candidate {clause.canonical_form()} pos={pos} "
                        f"error: {exc}"
                    )
                    continue
                if best is None or t_sol.log_likelihood > best[1].log_likelihood:
                    best = (trial, t_sol, pos)
            if best is not None and (
                best[1].log_likelihood > current_ll + min_gain
            ):
                gain = best[1].log_likelihood - current_ll
                soft, best_sol = best[0], best[1]
                current_ll = best_sol.log_likelihood
                improved_any = True
                log_lines.append(
                    f"accept {clause.canonical_form()} pos={best[2]} "
                    f"dll={gain:.6g}"
                )
            else:
                dll = (best[1].log_likelihood - current_ll) if best else float("nan")
                log_lines.append(
                    f"reject {clause.canonical_form()} dll={dll:.6g}"
                )
        if not improved_any:
            break

    final_params, final_sol = evaluate(soft)
    weighted = [WeightedFormula(BOTTOM, final_sol.lambdas[0])]
    for clause, lam in zip(soft, final_sol.lambdas[1:]):
        weighted.append(WeightedFormula(clause, lam))
    for h in hard:
        weighted.append(WeightedFormula(h, HARD_LEVEL))
    theory = StratifiedTheory(weighted)
    log_lines.append(
        f"final log-likelihood {final_sol.log_likelihood:.6g} "
        f"cache_hits={cache.hits} cache_misses={cache.misses}"
    )
    return theory, log_lines


# ---------------------------------------------------------------------------
# Simplification


def simplify(theory: StratifiedTheory, k) -> StratifiedTheory:
    """Drop formulas entailed by strictly higher strata, and body atoms
    whose removal is entailed by higher strata plus the rule itself;
    weights stay put.  Entailment is checked over k constants."""
    constants = set(canonical_constants(k))
    formulas = list(theory.weighted_formulas())  # (clause, level) desc

    changed = True
    while changed:
        changed = False
        for idx, (clause, level) in enumerate(formulas):
            if clause.is_bottom:
                continue
            higher = [c for c, l in formulas if l > level + 1e-12]
            if sat.entails(higher, constants, clause):
                formulas.pop(idx)
                changed = True
                break
            horn = _as_horn(clause)
            if horn is None or not horn.body:
                continue
            context = higher + [clause]
            for atom in sorted(horn.body, key=str):
                stronger = HornRule(
                    horn.head, horn.body - {atom}, horn.alldiff
                ).to_clause()
                if sat.entails(context, constants, stronger):
                    formulas[idx] = (stronger.rename_canonically(), level)
                    changed = True
                    break
            if changed:
                break
    return StratifiedTheory([WeightedFormula(c, l) for c, l in formulas])


def _as_horn(clause: Clause):
    pos = [l for l in clause.literals if l.positive]
    neg = [l for l in clause.literals if not l.positive]
    if len(pos) != 1:
        return None
    return HornRule(pos[0].atom, (l.atom for l in neg), clause.alldiff)
