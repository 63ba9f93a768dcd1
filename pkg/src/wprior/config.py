"""Experiment configuration: INI files (or a previous run's summary JSON).

Example::

    [experiment]
    kind = multiplicity
    family = gauss_mean
    prior = wprior
    theta0 = -2; 0; 3
    N = 10, 100, 1000
    master_seed = 7
    output = results/multiplicity

    [budgets]
    n_outer = 256
    n_inner = 512

Parameter points are separated by ``;`` and their components by ``,``.
Family constructor options go in ``[family]``; everything kind-specific
(``method``, ``taus``, ``true_prior``, ``D`` ...) goes in ``[options]``.
"""
from __future__ import annotations

import configparser
import json
import os
from dataclasses import asdict, dataclass, field
from typing import Optional

from .errors import ConfigError, DomainError
from .families import FAMILIES, get_family
from .priors import parse_prior

KINDS = ("multiplicity", "entropy", "coding_info", "select", "optimality", "density")

DEFAULTS = {
    "prior": "wprior",
    "output": "results",
    "n_outer": 256,
    "n_inner": 512,
    "evidence": "auto",
    "method": "direct",
    "taus": [0.8, 0.9, 1.0, 1.1, 1.2],
    "realization": "data_size",
    "domain_scale": 1.0,
    "D": [0.25, 0.5, 1.0],
    "k_max": None,
    "replicates": 200,
    "include_null": False,
}


@dataclass
class ExperimentConfig:
    kind: str
    family: str
    master_seed: int
    N: list
    theta0: list = field(default_factory=list)
    prior: str = DEFAULTS["prior"]
    family_options: dict = field(default_factory=dict)
    output: str = DEFAULTS["output"]
    n_outer: int = DEFAULTS["n_outer"]
    n_inner: int = DEFAULTS["n_inner"]
    evidence: str = DEFAULTS["evidence"]
    method: str = DEFAULTS["method"]
    taus: list = field(default_factory=lambda: list(DEFAULTS["taus"]))
    realization: str = DEFAULTS["realization"]
    domain_scale: float = DEFAULTS["domain_scale"]
    true_prior: Optional[str] = None
    candidates: list = field(default_factory=list)
    D: list = field(default_factory=lambda: list(DEFAULTS["D"]))
    k_max: Optional[int] = None
    replicates: int = DEFAULTS["replicates"]
    data: Optional[str] = None
    include_null: bool = False

    def resolved(self) -> dict:
        return asdict(self)

    def make_family(self):
        return get_family(self.family, **self.family_options)


# ---------------------------------------------------------------------------
# parsing helpers; every error names the offending field
# ---------------------------------------------------------------------------

def _floats(text, fld):
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    try:
        return [float(v) for v in str(text).replace(";", ",").split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"expected a comma-separated list of numbers, got {text!r}", fld) from None


def _ints(text, fld):
    vals = _floats(text, fld)
    if any(v != int(v) for v in vals):
        raise ConfigError(f"expected integers, got {text!r}", fld)
    return [int(v) for v in vals]


def _points(text, fld):
    if isinstance(text, (list, tuple)):
        return [[float(c) for c in (p if isinstance(p, (list, tuple)) else [p])] for p in text]
    out = []
    for chunk in str(text).split(";"):
        if chunk.strip():
            try:
                out.append([float(c) for c in chunk.split(",")])
            except ValueError:
                raise ConfigError(f"bad parameter point {chunk.strip()!r}", fld) from None
    return out


def _int(value, fld):
    try:
        return int(str(value).strip())
    except ValueError:
        raise ConfigError(f"expected an integer, got {value!r}", fld) from None


def _bool(value, fld):
    if isinstance(value, bool):
        return value
    v = str(value).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {value!r}", fld)


def _number(value):
    v = str(value).strip()
    try:
        return int(v)
    except ValueError:
        return float(v)


_LOCATION = {"n_outer": "budgets", "n_inner": "budgets"}


def _where(key):
    if key in ("kind", "family", "master_seed", "N", "theta0", "prior", "output"):
        return f"experiment.{key}"
    return f"{_LOCATION.get(key, 'options')}.{key}"


def from_mapping(flat: dict) -> ExperimentConfig:
    """Validate a flat key/value mapping and build the config."""
    flat = dict(flat)
    for req in ("kind", "family", "master_seed"):
        if flat.get(req) in (None, ""):
            raise ConfigError(f"missing required field {req!r}", _where(req))
    kind = str(flat.pop("kind")).strip()
    if kind not in KINDS:
        raise ConfigError(f"unknown experiment kind {kind!r}; expected one of {', '.join(KINDS)}", "experiment.kind")
    fam_id = str(flat.pop("family")).strip()
    if fam_id not in FAMILIES:
        raise ConfigError(f"unknown family id {fam_id!r}; known: {', '.join(sorted(FAMILIES))}",
                          "experiment.family")
    fam_opts = flat.pop("family_options", {}) or {}
    fam_opts = {k: (_number(v) if isinstance(v, str) else v) for k, v in fam_opts.items()}
    try:
        family = get_family(fam_id, **fam_opts)
    except TypeError as exc:
        raise ConfigError(f"bad family option: {exc}", "family") from None

    seed = _int(flat.pop("master_seed"), "experiment.master_seed")
    if not 0 <= seed < 2**64:
        raise ConfigError("master_seed must be in [0, 2^64)", "experiment.master_seed")
    cfg = ExperimentConfig(kind=kind, family=fam_id, master_seed=seed, N=[], family_options=fam_opts)

    if "N" in flat and flat["N"] not in (None, ""):
        cfg.N = _ints(flat.pop("N"), "experiment.N")
    else:
        flat.pop("N", None)
    if "theta0" in flat and flat["theta0"] not in (None, ""):
        cfg.theta0 = _points(flat.pop("theta0"), "experiment.theta0")
    else:
        flat.pop("theta0", None)

    for key in ("prior", "output", "evidence", "method", "realization", "true_prior", "data"):
        if flat.get(key) not in (None, ""):
            setattr(cfg, key, str(flat.pop(key)).strip())
        else:
            flat.pop(key, None)
    for key in ("n_outer", "n_inner", "replicates", "k_max"):
        if flat.get(key) not in (None, ""):
            setattr(cfg, key, _int(flat.pop(key), _where(key)))
        else:
            flat.pop(key, None)
    if flat.get("taus") not in (None, ""):
        cfg.taus = _floats(flat.pop("taus"), "options.taus")
    if flat.get("D") not in (None, ""):
        cfg.D = _floats(flat.pop("D"), "options.D")
    if flat.get("domain_scale") not in (None, ""):
        cfg.domain_scale = _floats(flat.pop("domain_scale"), "options.domain_scale")[0]
    if flat.get("include_null") not in (None, ""):
        cfg.include_null = _bool(flat.pop("include_null"), "options.include_null")
    if flat.get("candidates") not in (None, ""):
        c = flat.pop("candidates")
        cfg.candidates = [s.strip() for s in (c if isinstance(c, list) else str(c).split(";")) if s.strip()]
    for key in ("taus", "D", "domain_scale", "include_null", "candidates"):
        flat.pop(key, None)
    if flat:
        key = sorted(flat)[0]
        raise ConfigError(f"unknown field {key!r}", _where(key))

    _check(cfg, family)
    return cfg


def _check(cfg: ExperimentConfig, family):
    if cfg.n_outer < 2 or cfg.n_inner < 2:
        raise ConfigError("budgets must be >= 2", "budgets.n_outer" if cfg.n_outer < 2 else "budgets.n_inner")
    needs_n = cfg.kind != "select" or cfg.data is None
    if needs_n and not cfg.N:
        raise ConfigError("N grid must be nonempty", "experiment.N")
    if any(n < 1 for n in cfg.N):
        raise ConfigError(f"N values must be >= 1, got {cfg.N}", "experiment.N")
    needs_theta = cfg.kind in ("multiplicity", "entropy", "coding_info", "density") or (
        cfg.kind == "select" and cfg.data is None)
    if needs_theta and not cfg.theta0:
        raise ConfigError("theta0 grid must be nonempty", "experiment.theta0")
    for pt in cfg.theta0:
        try:
            family.check(pt)
        except (DomainError, ValueError) as exc:
            raise ConfigError(str(exc), "experiment.theta0") from None
    K = len(cfg.theta0[0]) if cfg.theta0 else family.k_min
    if cfg.kind in ("multiplicity", "entropy", "coding_info"):
        try:
            parse_prior(cfg.prior, family, K, cfg.N[0])
        except ValueError as exc:
            raise ConfigError(str(exc), "experiment.prior") from None
    if cfg.evidence not in ("auto", "conjugate_closed_form", "quadrature", "importance_sampling", "laplace"):
        raise ConfigError(f"unknown evidence method {cfg.evidence!r}", "options.evidence")
    if cfg.method not in ("direct", "cv", "both"):
        raise ConfigError(f"method must be direct, cv or both, got {cfg.method!r}", "options.method")
    if cfg.kind == "entropy":
        from .estimators import TemperSchedule
        try:
            sched = TemperSchedule(tuple(cfg.taus), cfg.realization)
            for n in cfg.N:
                sched.sizes(n)
        except ValueError as exc:
            raise ConfigError(str(exc), "options.taus") from None
    if cfg.kind == "coding_info" and cfg.domain_scale <= 0:
        raise ConfigError("domain_scale must be positive", "options.domain_scale")
    if cfg.kind == "optimality":
        if not cfg.true_prior:
            raise ConfigError("optimality needs a proper true_prior", "options.true_prior")
        if not cfg.candidates:
            raise ConfigError("optimality needs at least one candidate", "options.candidates")
        for fld, spec in [("options.true_prior", cfg.true_prior)] + [("options.candidates", c) for c in cfg.candidates]:
            try:
                p = parse_prior(spec, family, K, cfg.N[0])
            except ValueError as exc:
                raise ConfigError(str(exc), fld) from None
            if not p.is_proper:
                raise ConfigError(f"prior {spec!r} is improper", fld)
    if cfg.kind == "density" and (not cfg.D or any(d <= 0 for d in cfg.D)):
        raise ConfigError("D values must be positive", "options.D")
    if cfg.kind == "select":
        if cfg.data is not None and not os.path.exists(cfg.data):
            raise ConfigError(f"data file {cfg.data!r} not found", "options.data")
        if cfg.k_max is not None and not max(1, family.k_min) <= cfg.k_max <= family.k_max:
            raise ConfigError(f"k_max must lie in [{max(1, family.k_min)}, {family.k_max}]", "options.k_max")
        if cfg.replicates < 1:
            raise ConfigError("replicates must be >= 1", "options.replicates")


def parse_ini(text: str, source: str = "<config>") -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    cp.optionxform = str  # keep "N" and "D" as written
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {source}: {exc}", "") from None
    if not cp.has_section("experiment"):
        raise ConfigError("missing [experiment] section", "experiment")
    flat = {}
    for section in cp.sections():
        if section not in ("experiment", "budgets", "options", "family"):
            raise ConfigError(f"unknown section [{section}]", section)
        if section == "family":
            flat["family_options"] = dict(cp.items("family"))
        else:
            flat.update(cp.items(section))
    return from_mapping(flat)


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}", "") from None
    if path.endswith(".json"):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}", "") from None
        return from_mapping(doc.get("config", doc))
    return parse_ini(text, path)
