"""Experiment configuration: a flat ``key = value`` file with dotted keys.

Blank lines and ``#`` comments are ignored. Lists are comma separated.
Absent keys take the defaults below, which reproduce the reference
experiment (12-node generated graph, theta=2, unit noise, kappa=1.15,
k0=t0=25, 100 runs, alpha=1 with Metropolis weights).
See ``configs/default.conf`` for an annotated example.
"""

import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .errors import ParseError, ValidationError

SEED_ENV = "QUORUM_RA_SEED"

QUANTIZER_KINDS = ("prob", "unif", "none")
RULE_KINDS = ("compensating", "pq", "tq")
X_INIT = ("uniform", "measurement")
DEFAULT_RULES = ("prob-ra", "prob", "unif", "pq-ra", "tq-ra")
DEFAULT_SWEEP = (0.05, 0.1, 0.2, 0.4, 0.8, 1.0)


@dataclass(frozen=True)
class ExperimentConfig:
    theta: float = 2.0
    sigma: float = 1.0
    alpha: float = 1.0
    kappa: float = 1.15
    k0: int = 25
    t0: int = 25
    steps: int = 2025
    runs: int = 100
    seed: int = 20240601
    eta: float = 0.9
    eta_from: int = 100
    quantizer_kind: str = "prob"
    delta: float = 1.0
    rule_kind: str = "compensating"
    averaging: bool = True
    x_init: str = "uniform"
    graph_file: str = None
    graph_n: int = 12
    graph_p: float = 0.15
    graph_seed: int = 7
    workers: int = 1
    rk_record: bool = True
    rk_stride: int = 10
    cU: float = None
    compare_rules: tuple = DEFAULT_RULES
    sweep_deltas: tuple = DEFAULT_SWEEP
    sweep_rules: tuple = ("prob-ra",)
    source: str = field(default=None, compare=False)

    def with_overrides(self, **kw):
        return validate(replace(self, **kw))


def _int(s):
    return int(s, 0) if s.lower().startswith(("0x", "0o", "0b")) else int(s)


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt_float(s):
    return None if s.strip().lower() in ("", "none") else float(s)


def _opt_str(s):
    return None if s.strip().lower() in ("", "none") else s.strip()


def _floats(s):
    return tuple(float(p) for p in s.split(",") if p.strip())


def _words(s):
    return tuple(p.strip().lower() for p in s.split(",") if p.strip())


def _word(s):
    return s.strip().lower()


# file key -> (attribute, converter)
KEYS = {
    "theta": ("theta", float),
    "sigma": ("sigma", float),
    "alpha": ("alpha", float),
    "kappa": ("kappa", float),
    "k0": ("k0", _int),
    "t0": ("t0", _int),
    "steps": ("steps", _int),
    "runs": ("runs", _int),
    "seed": ("seed", _int),
    "eta": ("eta", float),
    "eta_from": ("eta_from", _int),
    "quantizer.kind": ("quantizer_kind", _word),
    "quantizer.delta": ("delta", float),
    "delta": ("delta", float),
    "rule.kind": ("rule_kind", _word),
    "rule.averaging": ("averaging", _bool),
    "x_init": ("x_init", _word),
    "graph.file": ("graph_file", _opt_str),
    "graph.n": ("graph_n", _int),
    "graph.p": ("graph_p", float),
    "graph.seed": ("graph_seed", _int),
    "workers": ("workers", _int),
    "rk.record": ("rk_record", _bool),
    "rk.stride": ("rk_stride", _int),
    "cU": ("cU", _opt_float),
    "compare.rules": ("compare_rules", _words),
    "sweep.deltas": ("sweep_deltas", _floats),
    "sweep.rules": ("sweep_rules", _words),
}


def _assign(values, key, raw, line=None):
    if key not in KEYS:
        raise ParseError(f"unknown key {key!r}", line=line, key=key)
    attr, conv = KEYS[key]
    try:
        values[attr] = conv(raw.strip())
    except ValueError as exc:
        raise ParseError(f"bad value {raw.strip()!r}: {exc}", line=line, key=key) from None


def _split(text, line=None):
    if "=" not in text:
        raise ParseError(f"expected 'key = value', got {text.strip()!r}", line=line)
    key, raw = text.split("=", 1)
    key = key.strip()
    if not key:
        raise ParseError("empty key", line=line)
    return key, raw


def parse_text(text, overrides=(), env=None):
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, val = _split(line, lineno)
        _assign(values, key, val, lineno)
    env = os.environ if env is None else env
    if env.get(SEED_ENV, "").strip():
        _assign(values, "seed", env[SEED_ENV])
    for item in overrides:
        key, val = _split(item)
        _assign(values, key, val)
    return validate(ExperimentConfig(**values))


def parse_config(path=None, overrides=(), env=None):
    """Read ``path`` (or nothing, for pure defaults), then env seed, then ``overrides``."""
    text = ""
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ParseError(f"cannot read config {path}: {exc.strerror}") from None
    cfg = parse_text(text, overrides, env)
    if path is not None:
        cfg = replace(cfg, source=str(path))
        if cfg.graph_file and not Path(cfg.graph_file).is_absolute():
            cfg = replace(cfg, graph_file=str(Path(path).parent / cfg.graph_file))
    return cfg


def validate(cfg):
    def need(cond, msg):
        if not cond:
            raise ValidationError(msg)

    need(cfg.runs >= 1, f"runs must be >= 1, got {cfg.runs}")
    need(cfg.k0 >= 0 and cfg.t0 >= 0, "k0 and t0 must be nonnegative")
    need(cfg.t0 >= cfg.k0, f"t0 ({cfg.t0}) must be >= k0 ({cfg.k0})")
    need(cfg.steps > max(cfg.k0, cfg.t0) + 2,
         f"steps ({cfg.steps}) must exceed max(k0, t0) + 2 = {max(cfg.k0, cfg.t0) + 2}")
    need(cfg.sigma >= 0, f"sigma must be >= 0, got {cfg.sigma}")
    need(cfg.alpha > 0, f"alpha must be > 0, got {cfg.alpha}")
    need(cfg.kappa > 0, f"kappa must be > 0, got {cfg.kappa}")
    need(cfg.quantizer_kind in QUANTIZER_KINDS,
         f"quantizer.kind must be one of {QUANTIZER_KINDS}, got {cfg.quantizer_kind!r}")
    need(cfg.quantizer_kind == "none" or cfg.delta > 0,
         f"quantizer.delta must be > 0 unless quantizer.kind = none, got {cfg.delta}")
    need(cfg.rule_kind in RULE_KINDS, f"rule.kind must be one of {RULE_KINDS}, got {cfg.rule_kind!r}")
    need(cfg.x_init in X_INIT, f"x_init must be one of {X_INIT}, got {cfg.x_init!r}")
    need(0 < cfg.eta < 1, f"eta must lie in (0, 1), got {cfg.eta}")
    need(cfg.eta_from >= 1, f"eta_from must be >= 1, got {cfg.eta_from}")
    need(cfg.graph_n >= 2, f"graph.n must be >= 2, got {cfg.graph_n}")
    need(0 <= cfg.graph_p <= 1, f"graph.p must lie in [0, 1], got {cfg.graph_p}")
    need(cfg.workers >= 1, f"workers must be >= 1, got {cfg.workers}")
    need(cfg.rk_stride >= 1, f"rk.stride must be >= 1, got {cfg.rk_stride}")
    need(cfg.seed >= 0, f"seed must be >= 0, got {cfg.seed}")
    need(cfg.cU is None or cfg.cU >= 0, f"cU must be >= 0, got {cfg.cU}")
    need(len(cfg.sweep_deltas) > 0 and all(d > 0 for d in cfg.sweep_deltas),
         "sweep.deltas must be a nonempty list of positive numbers")
    from .harness import RULE_LABELS

    for name in (*cfg.compare_rules, *cfg.sweep_rules):
        need(name in RULE_LABELS, f"unknown rule label {name!r}; known: {sorted(RULE_LABELS)}")
    return cfg


def dump_config(cfg):
    """Render ``cfg`` back into the file format (round-trips through :func:`parse_text`)."""
    by_attr = {}
    for key, (attr, _) in KEYS.items():
        by_attr.setdefault(attr, key)
    out = []
    for f in fields(cfg):
        if f.name == "source":
            continue
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(repr(x) if isinstance(x, float) else str(x) for x in v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        elif v is None:
            v = "none"
        elif isinstance(v, float):
            v = repr(v)
        out.append(f"{by_attr[f.name]} = {v}")
    return "\n".join(out) + "\n"
