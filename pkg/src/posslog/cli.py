"""Command-line interface.

Subcommands: learn-hard, learn-rules, learn, infer, evaluate, count,
encode-exact, synth.  Exit codes: 0 ok, 1 learning infeasibility, 2 I/O
or input errors, 3 budget exhaustion.
"""

from __future__ import annotations

import argparse
import json
import logging
import random
import sys

from .config import PipelineConfig
from .counting import (
    CutCountTask,
    ModelCountTask,
    SubsetCountTask,
    count_dispatch,
    count_sampled,
    count_xor_approx,
    matching_subsets_alg1,
    matching_subsets_naive,
)
from .csp import ConjunctiveQuery
from .data import format_example, parse_example
from .errors import (
    BudgetExhausted,
    InfeasibleError,
    ParseError,
    PipelineError,
    PosslogError,
)
from .evaluation import evaluate
from .logic import Literal, parse_formula_atom, parse_literal
from .pipeline import _child_seed, learn_candidates, run_pipeline, write_artifacts
from .possibilistic import (
    InferenceSession,
    InferenceStats,
    format_theory,
    exact_encoding,
    map_cutoff,
    map_prediction,
    parse_theory,
)
from .report import write_eval_outputs
from .structure import format_candidates, learn_hard_rules
from .synth import synth_generate
from .possibilistic import StratifiedTheory, WeightedFormula
from .possibilistic import HARD_LEVEL

log = logging.getLogger("posslog")

EXIT_OK = 0
EXIT_INFEASIBLE = 1
EXIT_IO = 2
EXIT_BUDGET = 3


def _add_config_flags(parser):
    parser.add_argument("--config", help="key=value configuration file")
    for key in PipelineConfig.keys():
        typ = PipelineConfig.key_type(key)
        parser.add_argument(
            f"--{key}", dest=f"cfg::{key}", metavar=typ.__name__.upper(),
            help=argparse.SUPPRESS,
        )


def _build_config(args):
    overrides = {}
    for name, value in vars(args).items():
        if name.startswith("cfg::") and value is not None:
            overrides[name[len("cfg::"):]] = value
    if getattr(args, "config", None):
        return PipelineConfig.load(args.config, overrides)
    return PipelineConfig(overrides)


def _read(path):
    with open(path) as fh:
        return fh.read()


def _parse_evidence(text):
    evidence = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line or line.startswith("@constants"):
            continue
        lit = parse_literal(line, lineno)
        if not lit.atom.is_ground:
            raise ParseError(f"evidence must be ground: {line}", line=lineno)
        evidence.add(lit)
    return frozenset(evidence)


def _evidence_constants(text):
    from .logic import Constant

    consts = set()
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line.startswith("@constants"):
            consts.update(Constant(n) for n in line.split()[1:])
    return consts


# ---------------------------------------------------------------------------
# Subcommands


def _cmd_learn_hard(args):
    config = _build_config(args)
    example = parse_example(_read(args.data))
    rules = learn_hard_rules(example, config.hard_rule_config())
    theory = StratifiedTheory(
        [WeightedFormula(r, HARD_LEVEL) for r in rules]
    )
    text = format_theory(theory) if rules else ""
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _cmd_learn_rules(args):
    config = _build_config(args)
    example = parse_example(_read(args.data))
    hard = []
    if args.hard:
        hard = [c for c, _ in parse_theory(_read(args.hard)).weighted_formulas()
                if not c.is_bottom]
    candidates = learn_candidates(example, hard, config, config["seed"])
    text = format_candidates(candidates)
    provenance = "\n".join(r.provenance_line() for r in candidates)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
        with open(args.out + ".log", "w") as fh:
            fh.write(provenance + ("\n" if provenance else ""))
    else:
        sys.stdout.write(text)
        if provenance:
            sys.stderr.write(provenance + "\n")
    return EXIT_OK


def _cmd_learn(args):
    config = _build_config(args)
    example = parse_example(_read(args.data))
    try:
        theory, artifacts = run_pipeline(example, config)
    except PipelineError as exc:
        log.error("%s", exc)
        if isinstance(exc.cause, BudgetExhausted):
            return EXIT_BUDGET
        return EXIT_INFEASIBLE
    write_artifacts(artifacts, args.out)
    log.info("theory written to %s", args.out)
    return EXIT_OK


def _cmd_infer(args):
    theory = parse_theory(_read(args.theory))
    ev_text = _read(args.evidence)
    evidence = _parse_evidence(ev_text)
    constants = {c for lit in evidence for c in lit.atom.args}
    constants |= _evidence_constants(ev_text)
    signature = None
    if args.data:
        base = parse_example(_read(args.data))
        constants |= base.constants
        signature = set(base.signature)
    stats = InferenceStats()
    session = InferenceSession(theory, constants)
    cutoff = map_cutoff(theory, evidence, constants, stats, session)
    predicted = map_prediction(theory, evidence, constants,
                               signature=signature, stats=stats,
                               session=session)
    for atom in sorted(predicted, key=str):
        sys.stdout.write(f"{atom}\n")
    if args.json:
        summary = {
            "mu0": cutoff.level,
            "cut_size": len(cutoff.cut),
            "predicted_true": len(predicted),
            "cutoff_sat_calls": stats.cutoff_sat_calls,
            "total_sat_calls": stats.total,
        }
        sys.stderr.write(json.dumps(summary, sort_keys=True) + "\n")
    return EXIT_OK


def _cmd_evaluate(args):
    config = _build_config(args)
    theory = parse_theory(_read(args.theory))
    test = parse_example(_read(args.data))
    seed = config["seed"]
    rng = random.Random(_child_seed(seed, "evaluate"))
    report = evaluate(
        theory, test, args.s_max, args.trials, rng, seed=seed,
        positives_only=args.positives_only,
        independent=args.independent_evidence,
    )
    paths = write_eval_outputs(report, args.out_dir)
    for key, path in sorted(paths.items()):
        log.info("wrote %s: %s", key, path)
    sys.stdout.write(json.dumps(report.summary(), sort_keys=True) + "\n")
    return EXIT_OK


def _parse_query(text):
    atoms = []
    negated = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if part.startswith("!"):
            negated.append(parse_formula_atom(part[1:]))
        else:
            atoms.append(parse_formula_atom(part))
    return ConjunctiveQuery(atoms=tuple(atoms), negated=tuple(negated),
                            alldiff=False)


def _cmd_count(args):
    config = _build_config(args)
    policy = config.counting_policy()
    seed = config["seed"]
    rng = random.Random(_child_seed(seed, "count"))
    example = parse_example(_read(args.data)) if args.data else None
    k = args.k

    if args.theory:
        theory = parse_theory(_read(args.theory))
        clauses = frozenset(
            c for c, _ in theory.weighted_formulas() if not c.is_bottom
        )
        signature = frozenset(
            l.atom.predicate for c in clauses for l in c.literals
        )
        if example is not None:
            task = CutCountTask(example, clauses, k)
        else:
            task = ModelCountTask(clauses, signature, k, mode=args.mode)
    else:
        if example is None or not args.query:
            raise ParseError("count needs --data with --query, or --theory")
        task = SubsetCountTask(example, _parse_query(args.query), k)

    if args.method == "auto":
        report = count_dispatch(task, policy, rng)
    elif args.method == "naive":
        subsets = matching_subsets_naive(task.example, task.query, k)
        from .counting import CountReport
        report = CountReport(value=float(len(subsets)), method="exact-naive")
    elif args.method == "alg1":
        subsets = matching_subsets_alg1(task.example, task.query, k)
        from .counting import CountReport
        report = CountReport(value=float(len(subsets)), method="exact-alg1")
    elif args.method == "sampled":
        report = count_sampled(task.example, task.query, k, policy, rng)
    elif args.method == "xor":
        report = count_xor_approx(task.example, task.query, k,
                                  policy.epsilon, policy.delta, rng, policy)
    else:
        raise ParseError(f"unknown method {args.method}")
    from dataclasses import replace
    report = replace(report, seed=seed)
    sys.stdout.write(report.line() + "\n")
    return EXIT_OK


def _cmd_encode_exact(args):
    example = parse_example(_read(args.data))
    theory = exact_encoding(example, args.k)
    text = format_theory(theory)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _cmd_synth(args):
    config = _build_config(args)
    theory = parse_theory(_read(args.theory))
    rng = random.Random(_child_seed(config["seed"], "synth", args.n))
    example = synth_generate(theory, args.n, rng,
                             policy=config.counting_policy())
    text = format_example(example)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="posslog",
        description="Learn stratified possibilistic logic theories from "
                    "relational data and run MAP inference.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("learn-hard", help="mine exception-free hard clauses")
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    _add_config_flags(p)
    p.set_defaults(fn=_cmd_learn_hard)

    p = sub.add_parser("learn-rules", help="beam-search Horn rule candidates")
    p.add_argument("--data", required=True)
    p.add_argument("--hard", help="theory file with hard rules")
    p.add_argument("--out")
    _add_config_flags(p)
    p.set_defaults(fn=_cmd_learn_rules)

    p = sub.add_parser("learn", help="full pipeline to a weighted theory")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(fn=_cmd_learn)

    p = sub.add_parser("infer", help="MAP prediction from evidence")
    p.add_argument("--theory", required=True)
    p.add_argument("--evidence", required=True,
                   help="evidence file: ground literals, '!' for negative")
    p.add_argument("--data", help="base data file fixing constants/signature")
    p.add_argument("--json", action="store_true",
                   help="print an inference summary to stderr")
    p.set_defaults(fn=_cmd_infer)

    p = sub.add_parser("evaluate", help="Hamming-error protocol vs baseline")
    p.add_argument("--theory", required=True)
    p.add_argument("--data", required=True, help="test data file")
    p.add_argument("--s-max", type=int, default=15)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--out-dir", default="eval-out")
    p.add_argument("--positives-only", action="store_true")
    p.add_argument("--independent-evidence", action="store_true")
    _add_config_flags(p)
    p.set_defaults(fn=_cmd_evaluate)

    p = sub.add_parser("count", help="matching-subset / model counting")
    p.add_argument("--data")
    p.add_argument("--query", help="conjunctive query, '!' negates, ',' joins")
    p.add_argument("--theory", help="count cut/models of a theory file")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--mode", choices=("ground", "cutting-plane"),
                   default="ground")
    p.add_argument("--method",
                   choices=("auto", "naive", "alg1", "sampled", "xor"),
                   default="auto")
    _add_config_flags(p)
    p.set_defaults(fn=_cmd_count)

    p = sub.add_parser("encode-exact",
                       help="exact possibilistic encoding of the width-k "
                            "marginal")
    p.add_argument("--data", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_encode_exact)

    p = sub.add_parser("synth", help="sample a database from a theory")
    p.add_argument("--theory", required=True)
    p.add_argument("--n", type=int, required=True, help="constant count")
    p.add_argument("--out")
    _add_config_flags(p)
    p.set_defaults(fn=_cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.fn(args)
    except (OSError, ParseError) as exc:
        log.error("%s", exc)
        return EXIT_IO
    except BudgetExhausted as exc:
        log.error("budget exhausted: %s", exc)
        return EXIT_BUDGET
    except InfeasibleError as exc:
        log.error("infeasible: %s", exc)
        return EXIT_INFEASIBLE
    except PipelineError as exc:
        log.error("%s", exc)
        return EXIT_INFEASIBLE
    except PosslogError as exc:
        log.error("%s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
