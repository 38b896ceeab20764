"""Pipeline configuration: flat namespaced key=value files, module
defaults, and CLI overrides sharing the same key names.
"""

from __future__ import annotations

from dataclasses import dataclass

from .counting import CountingPolicy
from .errors import ParseError
from .structure import BeamConfig, HardRuleConfig

_SCHEMA = {
    # key: (type, default, validator)
    "marginal.k": (int, 3, lambda v: v >= 1),
    "hard.t": (int, 3, lambda v: v >= 1),
    "hard.t_prime": (int, 4, lambda v: v >= 2),
    "beam.b": (int, 10, lambda v: v >= 1),
    "beam.l": (int, 3, lambda v: v >= 1),
    "beam.restarts": (int, 3, lambda v: v >= 1),
    "examples.budget": (int, 500, lambda v: v >= 1),
    "examples.subsample_positives": (bool, False, lambda v: True),
    "count.exact_limit_small": (int, 20_000, lambda v: v >= 1),
    "count.exact_limit_large": (int, 400_000, lambda v: v >= 1),
    "count.sample_budget": (int, 200, lambda v: v >= 1),
    "count.ci_rel_width": (float, 0.2, lambda v: 0 < v < 1),
    "count.epsilon": (float, 0.8, lambda v: v > 0),
    "count.delta": (float, 0.2, lambda v: 0 < v < 1),
    "count.model_exact_atoms": (int, 24, lambda v: v >= 0),
    "gp.tol": (float, 1e-8, lambda v: v > 0),
    "gp.max_iter": (int, 100_000, lambda v: v >= 1),
    "greedy.passes": (int, 1, lambda v: v >= 1),
    "greedy.min_gain": (float, 1e-9, lambda v: v > 0),
    "seed": (int, 0, lambda v: True),
    "jobs": (int, 1, lambda v: v >= 1),
}


def _coerce(key, raw):
    typ, _, validator = _SCHEMA[key]
    if typ is bool:
        if isinstance(raw, bool):
            value = raw
        elif str(raw).lower() in ("1", "true", "yes", "on"):
            value = True
        elif str(raw).lower() in ("0", "false", "no", "off"):
            value = False
        else:
            raise ParseError(f"bad boolean for {key}: {raw!r}")
    else:
        try:
            value = typ(raw)
        except (TypeError, ValueError):
            raise ParseError(f"bad value for {key}: {raw!r}")
    if not validator(value):
        raise ParseError(f"value for {key} out of range: {value!r}")
    return value


class PipelineConfig:
    """Flat configuration; unknown keys are rejected, missing keys take
    module defaults."""

    def __init__(self, overrides=None):
        self.values = {k: default for k, (_, default, _) in _SCHEMA.items()}
        for key, raw in (overrides or {}).items():
            if key not in _SCHEMA:
                raise ParseError(f"unknown configuration key {key!r}")
            self.values[key] = _coerce(key, raw)
        if self.values["hard.t_prime"] <= self.values["hard.t"]:
            raise ParseError("hard.t_prime must exceed hard.t")

    def __getitem__(self, key):
        return self.values[key]

    @classmethod
    def load(cls, path, overrides=None):
        data = {}
        with open(path) as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ParseError("expected key=value", line=lineno)
                key, value = line.split("=", 1)
                data[key.strip()] = value.strip()
        data.update(overrides or {})
        return cls(data)

    @staticmethod
    def keys():
        return tuple(_SCHEMA)

    @staticmethod
    def key_type(key):
        return _SCHEMA[key][0]

    def hard_rule_config(self) -> HardRuleConfig:
        return HardRuleConfig(
            t=self["hard.t"], t_prime=self["hard.t_prime"],
            k=self["marginal.k"],
        )

    def beam_config(self) -> BeamConfig:
        return BeamConfig(
            b=self["beam.b"], l=self["beam.l"], k=self["marginal.k"],
            restarts=self["beam.restarts"],
        )

    def counting_policy(self) -> CountingPolicy:
        return CountingPolicy(
            exact_limit_small=self["count.exact_limit_small"],
            exact_limit_large=self["count.exact_limit_large"],
            ci_rel_width_threshold=self["count.ci_rel_width"],
            epsilon=self["count.epsilon"],
            delta=self["count.delta"],
            sample_budget=self["count.sample_budget"],
            model_exact_atoms=self["count.model_exact_atoms"],
        )

    def format(self) -> str:
        lines = [f"{k}={self.values[k]}" for k in sorted(self.values)]
        return "\n".join(lines) + "\n"
