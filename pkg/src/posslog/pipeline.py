"""Pipeline orchestration: hard rules, per-predicate example construction
and beam search, greedy weight learning, simplification, and artifact
writing.  Deterministic under a fixed seed.
"""

from __future__ import annotations

import logging
import random
from concurrent.futures import ThreadPoolExecutor

from .config import PipelineConfig
from .errors import PipelineError, PosslogError
from .possibilistic import format_theory
from .structure import beam_search, build_examples, format_candidates, learn_hard_rules
from .weights import greedy_build, simplify

log = logging.getLogger(__name__)


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except PosslogError as exc:
        raise PipelineError(name, exc) from exc


def learn_candidates(example, hard, config: PipelineConfig, seed):
    """Per-predicate training sets and beam search; predicates run
    independently (optionally in parallel), results merged in name order."""
    beam_cfg = config.beam_config()
    budget = config["examples.budget"]
    subsample = config["examples.subsample_positives"]
    preds = sorted(example.signature)

    def one(pred):
        rng = random.Random(_child_seed(seed, "examples", pred.name))
        examples = build_examples(
            example, hard, pred, budget, rng,
            subsample_positives=subsample,
        )
        if examples.degenerate:
            log.warning("skipping %s: no positive examples", pred)
            return pred, examples, []
        rules = beam_search(example, pred, examples, beam_cfg)
        return pred, examples, rules

    jobs = config["jobs"]
    if jobs > 1 and len(preds) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one, preds))
    else:
        results = [one(p) for p in preds]
    results.sort(key=lambda r: r[0])
    candidates = []
    for _, _, rules in results:
        candidates.extend(rules)
    return candidates


def _child_seed(seed, *tags):
    h = 0x811C9DC5
    for part in (str(seed),) + tuple(str(t) for t in tags):
        for ch in part:
            h = ((h ^ ord(ch)) * 0x01000193) & 0xFFFFFFFF
    return h


def run_pipeline(example, config: PipelineConfig):
    """learn_hard_rules -> build_examples + beam_search per predicate ->
    greedy_build -> simplify.  Returns (theory, artifacts dict)."""
    seed = config["seed"]
    if not example.atoms:
        log.warning("empty data: the theory reduces to vacuous hard rules")

    hard = _stage("learn-hard", learn_hard_rules, example,
                  config.hard_rule_config())
    log.info("hard rules: %d", len(hard))

    candidates = _stage("learn-rules", learn_candidates, example, hard,
                        config, seed)
    log.info("candidate rules: %d", len(candidates))

    policy = config.counting_policy()
    rng = random.Random(_child_seed(seed, "weights"))
    theory, decisions = _stage(
        "weight-learning", greedy_build, candidates, hard, example,
        config["marginal.k"], policy, rng,
        passes=config["greedy.passes"], min_gain=config["greedy.min_gain"],
    )
    theory = _stage("simplify", simplify, theory, config["marginal.k"])

    artifacts = {
        "theory_text": format_theory(theory),
        "candidates_text": format_candidates(candidates),
        "learning_log": "\n".join(
            [r.provenance_line() for r in candidates] + decisions
        ) + "\n",
    }
    return theory, artifacts


def write_artifacts(artifacts, theory_path, partial=False):
    suffix = ".partial" if partial else ""
    paths = {}
    with open(theory_path + suffix, "w") as fh:
        fh.write(artifacts["theory_text"])
    paths["theory"] = theory_path + suffix
    base = theory_path.rsplit(".", 1)[0]
    with open(base + ".candidates" + suffix, "w") as fh:
        fh.write(artifacts["candidates_text"])
    paths["candidates"] = base + ".candidates" + suffix
    with open(base + ".log" + suffix, "w") as fh:
        fh.write(artifacts["learning_log"])
    paths["log"] = base + ".log" + suffix
    return paths
