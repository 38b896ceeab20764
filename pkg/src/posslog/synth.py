"""Synthetic data generation: sample worlds from a stratified theory's
possibility distribution read as a probability distribution, by drawing a
stratum band proportionally to its mass and a uniform model within it.
"""

from __future__ import annotations

import logging
import math

from .counting import DEFAULT_POLICY, model_count
from .data import GlobalExample
from .errors import InfeasibleError
from .logic import Constant, constant_key
from .possibilistic import violates
from . import sat

log = logging.getLogger(__name__)

_ENUM_ATOM_CAP = 16
_CELL_TRIES = 24


def synth_generate(theory, n_constants, rng, signature=None,
                   policy=DEFAULT_POLICY) -> GlobalExample:
    """One world over fresh constants 1..n, distributed per the theory.

    Band i holds the worlds satisfying every stratum above level i and
    violating level i; its mass is (1 - level_i) times its world count.
    Small languages enumerate bands exactly; larger ones sample a random
    XOR cell and pick uniformly inside it.
    """
    if signature is None:
        signature = set()
        for clause, _ in theory.weighted_formulas():
            signature |= {l.atom.predicate for l in clause.literals}
    signature = frozenset(signature)
    if not signature:
        raise InfeasibleError("the generator theory names no predicates")
    constants = frozenset(Constant(str(i)) for i in range(1, n_constants + 1))
    atoms = sat.signature_atoms(signature, constants)

    levels = theory.levels
    n = len(levels)
    cuts = [theory.cut_from(i) for i in range(n + 1)]

    def count(cut):
        cut = frozenset(c for c in cut)
        return _count_over(cut, signature, constants, atoms, rng, policy)

    counts = [count(cuts[i]) for i in range(n + 1)]
    if counts[n] <= 0:
        raise InfeasibleError("the hard stratum is unsatisfiable")

    masses = []
    # Band below every level: worlds violating the lowest stratum... the
    # band at index i collects worlds satisfying cut i+1 and violating
    # stratum i; the top band (satisfying everything) has weight one.
    band_specs = []
    for i in range(n):
        width = counts[i + 1] - counts[i]
        masses.append(max(0.0, (1.0 - levels[i]) * width))
        band_specs.append((i + 1, i))
    masses.append(1.0 * counts[0])
    band_specs.append((0, None))
    total = sum(masses)
    if total <= 0:
        raise InfeasibleError("every band has zero mass")

    r = rng.random() * total
    band = len(masses) - 1
    acc = 0.0
    for i, mass in enumerate(masses):
        acc += mass
        if r <= acc:
            band = i
            break
    cut_index, violated_index = band_specs[band]
    world = _sample_band(
        cuts[cut_index],
        None if violated_index is None else theory.strata[violated_index],
        signature, constants, atoms, rng, policy,
    )
    return GlobalExample(world, constants=constants, signature=signature)


def _count_over(cut, signature, constants, atoms, rng, policy):
    report = model_count(
        cut, len(constants), signature, mode="ground",
        epsilon=policy.epsilon, delta=policy.delta, rng=rng, policy=policy,
    )
    return float(report.value)


def _sample_band(cut, violated_stratum, signature, constants, atoms, rng,
                 policy):
    """Uniform world satisfying the cut and violating the given stratum
    (None means no violation requirement)."""
    cnf = sat.ground_to_cnf(cut, constants, extra_atoms=atoms)

    def in_band(world):
        if violated_stratum is None:
            return True
        return any(violates(c, world, constants) for c in violated_stratum)

    if len(atoms) <= _ENUM_ATOM_CAP:
        models, exhausted = sat.enumerate_full_models(
            cnf, limit=1 << len(atoms)
        )
        members = sorted(
            (m for m in models if in_band(m)),
            key=lambda m: sorted(str(a) for a in m),
        )
        if not members:
            raise InfeasibleError("selected band is empty")
        return members[rng.randrange(len(members))]

    # XOR-cell sampling: shrink the space until a cell enumerates, then
    # draw uniformly among the band members it contains.
    n_bits = len(atoms)
    target_cells = 64
    report = model_count(
        cut, len(constants), signature, mode="ground",
        epsilon=policy.epsilon, delta=policy.delta, rng=rng, policy=policy,
    )
    est = max(1.0, float(report.value))
    for attempt in range(_CELL_TRIES):
        m = max(0, int(math.ceil(math.log2(est / target_cells))))
        m = min(m, n_bits - 1)
        rows = [(rng.getrandbits(n_bits), rng.getrandbits(1))
                for _ in range(m)]
        models, exhausted = sat.enumerate_full_models(
            cnf, limit=4 * target_cells, xor_rows=rows
        )
        if not exhausted:
            est *= 2.0  # cell too crowded; add more rows next try
            continue
        members = sorted(
            (w for w in models if in_band(w)),
            key=lambda w: sorted(str(a) for a in w),
        )
        if members:
            return members[rng.randrange(len(members))]
        est = max(1.0, est / 2.0)  # empty cell; loosen
    raise InfeasibleError("could not sample a world from the selected band")
