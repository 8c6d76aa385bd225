"""Experiment configuration: one YAML file describing domain, walk and study.

Unknown keys fail loudly; every section has defaults so the bundled studies
run without a file at all.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import yaml

from .errors import ConfigError
from .expressions import spatial_function
from .geometry import Domain, box, interval, polygon
from .partition import COVER_GRAPH_BOUNDARY, NEAREST_SINGLE
from .walker import BIASED, CONTINUOUS, DISCRETE, SIMPLE

_DOMAIN_KEYS = {"kind", "a", "b", "lows", "highs", "vertices", "lipschitz_m"}
_WALKER_KEYS = {"kind", "time_mode", "a", "h"}
_RUN_KEYS = {"k_list", "horizon", "seed", "n_paths", "threads"}
_ASSIGN_KEYS = {"mode", "alpha"}
_OUTPUT_KEYS = {"plots"}


@dataclass
class ExperimentConfig:
    domain: Domain
    walker_kind: str = SIMPLE
    time_mode: str = CONTINUOUS
    a_expr: str | None = None
    h_expr: str | None = None
    k_list: tuple = (3, 4, 5)
    horizon: float = 0.5
    seed: int = 12345
    n_paths: int = 10_000
    threads: int = 1
    assignment_mode: str = COVER_GRAPH_BOUNDARY
    alpha: float | None = None
    plots: bool = True
    extras: dict = field(default_factory=dict)

    def walk_functions(self):
        a_fn = spatial_function(self.a_expr) if self.a_expr else None
        h_fn = spatial_function(self.h_expr) if self.h_expr else None
        return a_fn, h_fn


def _check_keys(section: dict, allowed: set, where: str):
    extra = set(section) - allowed
    if extra:
        raise ConfigError(f"unknown key(s) {sorted(extra)} in [{where}]")


def _parse_domain(section: dict) -> Domain:
    _check_keys(section, _DOMAIN_KEYS, "domain")
    kind = section.get("kind", "interval")
    try:
        if kind == "interval":
            dom = interval(float(section.get("a", 0.0)),
                           float(section.get("b", 1.0)),
                           lipschitz_m=float(section.get("lipschitz_m", 0.0)))
        elif kind == "box":
            dom = box(section.get("lows", [0.0, 0.0]),
                      section.get("highs", [1.0, 1.0]),
                      lipschitz_m=float(section.get("lipschitz_m", 1.0)))
        elif kind == "polygon":
            if "vertices" not in section:
                raise ConfigError("polygon domain needs 'vertices'")
            dom = polygon(section["vertices"],
                          lipschitz_m=float(section.get("lipschitz_m", 1.0)))
        else:
            raise ConfigError(f"unknown domain kind {kind!r}")
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad domain section: {exc}") from exc
    return dom


def load_config(path: str | None) -> ExperimentConfig:
    """Load a config file; None gives the built-in defaults."""
    if path is None:
        return ExperimentConfig(domain=interval(0.0, 1.0))
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        line = mark.line + 1 if mark is not None else "?"
        raise ConfigError(f"{path}:{line}: {exc.problem}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")

    known = {"domain", "walker", "run", "assignment", "output"}
    extras = {key: val for key, val in raw.items() if key not in known}

    domain = _parse_domain(raw.get("domain", {}) or {})
    walker = raw.get("walker", {}) or {}
    _check_keys(walker, _WALKER_KEYS, "walker")
    run = raw.get("run", {}) or {}
    _check_keys(run, _RUN_KEYS, "run")
    assign = raw.get("assignment", {}) or {}
    _check_keys(assign, _ASSIGN_KEYS, "assignment")
    output = raw.get("output", {}) or {}
    _check_keys(output, _OUTPUT_KEYS, "output")

    kind = walker.get("kind", SIMPLE)
    if kind not in (SIMPLE, BIASED):
        raise ConfigError(f"walker kind must be {SIMPLE!r} or {BIASED!r}")
    time_mode = walker.get("time_mode", CONTINUOUS)
    if time_mode == "discrete":
        time_mode = DISCRETE
    if time_mode not in (CONTINUOUS, DISCRETE):
        raise ConfigError("walker time_mode must be 'continuous' or 'discrete'")
    mode = assign.get("mode", COVER_GRAPH_BOUNDARY)
    if mode in ("nearest", NEAREST_SINGLE):
        mode = NEAREST_SINGLE
    elif mode in ("cover", COVER_GRAPH_BOUNDARY):
        mode = COVER_GRAPH_BOUNDARY
    else:
        raise ConfigError(f"unknown assignment mode {mode!r}")

    try:
        cfg = ExperimentConfig(
            domain=domain,
            walker_kind=kind,
            time_mode=time_mode,
            a_expr=walker.get("a"),
            h_expr=walker.get("h"),
            k_list=tuple(int(k) for k in run.get("k_list", (3, 4, 5))),
            horizon=float(run.get("horizon", 0.5)),
            seed=int(run.get("seed", 12345)),
            n_paths=int(run.get("n_paths", 10_000)),
            threads=int(run.get("threads", 1)),
            assignment_mode=mode,
            alpha=float(assign["alpha"]) if "alpha" in assign else None,
            plots=bool(output.get("plots", True)),
            extras=extras,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value in config: {exc}") from exc
    if any(k < 1 for k in cfg.k_list) or not cfg.k_list:
        raise ConfigError("run.k_list must contain integers >= 1")
    if cfg.horizon <= 0 or cfg.n_paths < 1:
        raise ConfigError("run.horizon must be > 0 and run.n_paths >= 1")
    if cfg.a_expr is not None and kind == SIMPLE:
        raise ConfigError("walker.a is only meaningful for the biased walk")
    return cfg
