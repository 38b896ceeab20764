"""Evaluation harness: Hamming error of MAP predictions against a test
database, per evidence size, compared with the all-false baseline that
asserts only the positive evidence.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

from .logic import Literal
from .possibilistic import InferenceSession, InferenceStats, map_prediction
from . import sat

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EvalRow:
    evidence_size: int
    theory_error: float
    baseline_error: float
    diff: float                 # baseline - theory (positive favors theory)
    cumulative_diff: float
    cutoff_sat_calls: float     # mean per inference
    total_sat_calls: float
    wall_ms: float


@dataclass(frozen=True)
class EvalReport:
    rows: tuple
    trials: int
    seed: int
    s_max: int
    sat_call_bound: int

    def summary(self):
        return {
            "trials": self.trials,
            "seed": self.seed,
            "s_max": self.s_max,
            "sat_call_bound": self.sat_call_bound,
            "final_cumulative_diff": self.rows[-1].cumulative_diff
            if self.rows else 0.0,
            "mean_theory_error": (
                sum(r.theory_error for r in self.rows) / len(self.rows)
            ) if self.rows else 0.0,
            "mean_baseline_error": (
                sum(r.baseline_error for r in self.rows) / len(self.rows)
            ) if self.rows else 0.0,
        }


def hamming(predicted, actual) -> int:
    """Size of the symmetric difference of two atom sets."""
    return len(set(predicted) ^ set(actual))


def evaluate(theory, test_example, s_max, trials, rng, seed=0,
             positives_only=False, independent=False) -> EvalReport:
    """For each evidence size s: draw s evidence literals from the test
    set (atom drawn uniformly, polarity equal to its test truth unless
    ``positives_only``), predict the MAP state, record the Hamming error
    against the test atoms, and compare with the baseline predicting only
    the positive evidence.  Evidence grows incrementally per trial unless
    ``independent``."""
    signature = set(test_example.signature)
    for clause, _ in theory.weighted_formulas():
        signature |= {l.atom.predicate for l in clause.literals}
    constants = test_example.constants
    universe = sat.signature_atoms(signature, constants)
    true_atoms = set(test_example.atoms)
    pool = sorted(true_atoms, key=str) if positives_only else \
        sorted(universe, key=str)
    s_cap = min(s_max, len(pool))
    if s_cap < s_max:
        log.warning("evidence size capped at %d (pool exhausted)", s_cap)

    session = InferenceSession(theory, constants)
    bound = math.ceil(math.log2(len(theory.levels) + 1)) + 1

    sums = {
        s: {"theory": 0.0, "baseline": 0.0, "cutoff": 0.0, "total": 0.0,
            "ms": 0.0}
        for s in range(1, s_cap + 1)
    }
    for trial in range(trials):
        order = rng.sample(pool, s_cap)
        for s in range(1, s_cap + 1):
            chosen = rng.sample(pool, s) if independent else order[:s]
            evidence = frozenset(
                Literal(a, True if positives_only else (a in true_atoms))
                for a in chosen
            )
            stats = InferenceStats()
            t0 = time.perf_counter()
            predicted = map_prediction(
                theory, evidence, constants, signature=signature,
                stats=stats, session=session,
            )
            elapsed = (time.perf_counter() - t0) * 1000.0
            ev_pos = {l.atom for l in evidence if l.positive}
            err_theory = hamming(predicted, true_atoms)
            err_base = hamming(ev_pos, true_atoms)
            if stats.cutoff_sat_calls > bound:
                raise AssertionError(
                    f"cutoff search used {stats.cutoff_sat_calls} calls, "
                    f"bound {bound}"
                )
            cell = sums[s]
            cell["theory"] += err_theory
            cell["baseline"] += err_base
            cell["cutoff"] += stats.cutoff_sat_calls
            cell["total"] += stats.total
            cell["ms"] += elapsed

    rows = []
    cumulative = 0.0
    for s in range(1, s_cap + 1):
        cell = sums[s]
        theory_err = cell["theory"] / trials
        base_err = cell["baseline"] / trials
        diff = base_err - theory_err
        cumulative += diff
        rows.append(EvalRow(
            evidence_size=s,
            theory_error=theory_err,
            baseline_error=base_err,
            diff=diff,
            cumulative_diff=cumulative,
            cutoff_sat_calls=cell["cutoff"] / trials,
            total_sat_calls=cell["total"] / trials,
            wall_ms=cell["ms"] / trials,
        ))
    return EvalReport(rows=tuple(rows), trials=trials, seed=seed,
                      s_max=s_cap, sat_call_bound=bound)
