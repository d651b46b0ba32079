"""Experiment configuration: YAML loading, schema validation and object construction."""
from __future__ import annotations

import copy
import re
from typing import Any, Mapping

import jsonschema
import numpy as np
import yaml

from .chain import KernelSequence, make_chain
from .errors import ConfigError
from .observable import ObservableSequence

EXPERIMENTS = {
    "mixing": "rho / reverse-phi / psi / varpi mixing coefficients against the lag",
    "rpf": "contraction curve of the transfer operator and its geometric fit",
    "decompose": "martingale-coboundary decomposition with certified reverse-martingale defect",
    "variance": "variance curves by exact, operator and Monte Carlo routes",
    "partition": "greedy variance partition into blocks of target variance",
    "assumptions": "Lindeberg, block-moment and fluctuation diagnostics",
    "be": "Kolmogorov distance to the normal law (lattice-exact and empirical)",
    "wasserstein": "Wasserstein distances to the normal law by quantile coupling",
    "mdp": "moderate deviation rates against -x^2/2",
    "ldp": "large deviation rates against the Legendre transform of the pressure",
    "charfn": "exact log-characteristic function against the summed pressure",
    "pressure": "pressure branches and their second derivative against the variance rate",
    "moments": "moment inequalities with fitted constants",
    "rds": "variance limits along an environment orbit for several phases",
    "lyapunov": "Lyapunov exponents of matrix products and cone contraction",
}

# ---------------------------------------------------------------------------
# YAML loading


class _Loader(yaml.SafeLoader):
    """SafeLoader that also reads ``1e-6`` and ``2E3`` as floats."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(
        r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
        |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
        |\.[0-9_]+(?:[eE][-+]?[0-9]+)?
        |[-+]?\.(?:inf|Inf|INF)
        |\.(?:nan|NaN|NAN))$""",
        re.X,
    ),
    list("-+0123456789."),
)


def _line_index(node, path=(), out=None) -> dict:
    """Map JSON paths (tuples) to 1-based source lines."""
    out = {} if out is None else out
    out[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            key = k.value
            out[path + (key,)] = k.start_mark.line + 1
            _line_index(v, path + (key,), out)
            out[path + (key,)] = k.start_mark.line + 1
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            _line_index(v, path + (i,), out)
    return out


def parse_text(text: str, source: str = "<config>") -> tuple[dict, dict]:
    try:
        node = yaml.compose(text, Loader=_Loader)
        data = yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(source, f"YAML syntax error: {getattr(exc, 'problem', exc)}",
                          mark.line + 1 if mark else None) from None
    if not isinstance(data, dict):
        raise ConfigError(source, "top level must be a mapping", 1)
    return data, _line_index(node) if node is not None else {}


def load(path: str) -> tuple[dict, dict]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(path, f"cannot read config: {exc.strerror}") from None
    return parse_text(text, path)


# ---------------------------------------------------------------------------
# schema

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_int = {"type": "integer"}
_posint = {"type": "integer", "minimum": 1}
_nonneg_int = {"type": "integer", "minimum": 0}
_unit = {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}
_expo = {"anyOf": [{"type": "number", "minimum": 1}, {"const": "inf"}]}
_matrix = {"type": "array", "items": {"type": "array", "items": _num}}
_ints = {"type": "array", "items": _posint, "minItems": 1}
_nums = {"type": "array", "items": _num, "minItems": 1}
_seed = {"type": "integer", "minimum": 0}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "additionalProperties": False, "required": list(required)}


CHAIN_SCHEMA = {
    **_obj({
        "kind": {"enum": ["homogeneous", "perturbed", "parry", "environment", "random_doeblin"]},
        "Q": _matrix, "epsilon": {"type": "number", "minimum": 0}, "length": _posint,
        "buffer": _nonneg_int, "seed": _seed,
        "initial": {"anyOf": [{"enum": ["stationary", "uniform"]}, _nums]},
        "A": _matrix, "kernels": {"type": "array", "items": _matrix, "minItems": 1},
        "orbit": {"type": "object"}, "phase": _nonneg_int,
        "d": {"type": "integer", "minimum": 2}, "floor": {"type": "number", "minimum": 0, "maximum": 1},
        "concentration": _pos,
    }, ["kind", "length"]),
    "allOf": [
        {"if": {"properties": {"kind": {"enum": ["homogeneous", "perturbed"]}}}, "then": {"required": ["Q"]}},
        {"if": {"properties": {"kind": {"const": "parry"}}}, "then": {"required": ["A"]}},
        {"if": {"properties": {"kind": {"const": "environment"}}}, "then": {"required": ["kernels"]}},
    ],
}

_maps = _obj({"a": {"anyOf": [_num, _nums]}, "b": {"anyOf": [_num, _nums]}})
_coeffs = {"anyOf": [_nums, _obj({"C": _pos, "delta": {"type": "number", "minimum": 0, "exclusiveMaximum": 1}},
                                  ["delta"])]}

OBSERVABLE_SCHEMA = {
    **_obj({
        "kind": {"enum": ["table", "random", "coboundary", "environment", "process"]},
        "l": _nonneg_int, "r": _nonneg_int, "table": {"type": "array"}, "n": _posint, "start": _int,
        "seed": _seed, "scale": _pos, "distribution": {"enum": ["normal", "uniform", "sign"]},
        "homogeneous": {"type": "boolean"}, "tables": {"type": "array"},
        "coboundary": {"type": "array"},
        "family": {"enum": ["matprod", "iterfn", "linear", "garch", "lyapunov"]},
        "matrices": {"type": "array"}, "maps": _maps, "y0": _num, "coefficients": _coeffs,
        "g": _nums, "mu": _pos, "alpha": _nums, "beta": _nums, "values": _nums,
        "base": _matrix, "perturbations": {"type": "array"}, "eps": {"type": "number", "minimum": 0},
        "index": {"enum": [0, 1]}, "radius": _nonneg_int, "target": _pos, "p": _expo,
    }, ["kind"]),
    "allOf": [
        {"if": {"properties": {"kind": {"const": "table"}}}, "then": {"required": ["table"]}},
        {"if": {"properties": {"kind": {"const": "process"}}}, "then": {"required": ["family"]}},
        {"if": {"properties": {"kind": {"const": "environment"}}},
         "then": {"anyOf": [{"required": ["tables"]}, {"required": ["coboundary"]}]}},
    ],
}

PARAMETERS = {
    "mixing": _obj({"kinds": {"type": "array", "items": {"enum": ["rho", "phi", "phi_reverse", "psi", "varpi"]}},
                    "lags": _ints, "past_window": _posint, "future_window": _posint, "q": _expo, "p": _expo,
                    "index_count": _posint}),
    "rpf": _obj({"j": _int, "n_max": {"type": "integer", "minimum": 4}, "p": _expo, "delta": _unit,
                 "residual_max": _pos, "expected_gamma": _unit, "gamma_tol": _pos}),
    "decompose": _obj({"K": {"anyOf": [_posint, {"const": "auto"}, {"type": "null"}]}, "target": _pos,
                       "n": _posint}),
    "variance": _obj({"n_grid": _ints, "methods": {"type": "array", "items": {"enum": ["exact", "operator",
                                                                                      "monte-carlo"]}},
                      "replicas": _posint, "rel_tol": _pos, "abs_tol": _pos, "dichotomy": {"type": "boolean"},
                      "tol": _pos}),
    "partition": _obj({"n": _posint, "A": _pos}),
    "assumptions": _obj({"n_grid": _ints, "eps_grid": _nums, "A": _pos, "k_moment": {"type": "integer",
                                                                                      "minimum": 2},
                         "u": _expo, "p": _expo, "q": _expo, "delta": _unit, "slope_tol": _pos}),
    "be": _obj({"n_grid": _ints, "replicas": {"type": "integer", "minimum": 0}, "s_grid": _nums,
                "alpha": _unit, "slope_tol": _pos, "empirical_n": _ints}),
    "wasserstein": _obj({"n_grid": _ints, "b_grid": {"type": "array", "items": {"type": "number", "minimum": 1}},
                         "slope_tol": _pos}),
    "mdp": _obj({"n_grid": _ints, "exponent": {"type": "number", "exclusiveMinimum": 0.5, "exclusiveMaximum": 1},
                 "x_grid": _nums, "mode": {"enum": ["lattice-exact", "monte-carlo"]}, "replicas": _posint,
                 "rel_tol": _pos}),
    "ldp": _obj({"eps_grid": _nums, "n_grid": _ints, "z_max": _pos, "rel_tol": _pos, "reference": _nums}),
    "charfn": _obj({"t_max": _pos, "n_t": {"type": "integer", "minimum": 3}, "n_grid": _ints, "bound": _pos,
                    "closed_form": {"enum": ["none", "iid_cos"]}, "closed_tol": _pos, "trend_tol": _pos}),
    "pressure": _obj({"z_max": _pos, "n_z": {"type": "integer", "minimum": 3}, "axis": {"enum": ["real", "imag"]},
                      "lo": _int, "hi": _int, "variance_n": _posint, "rel_tol": _pos}),
    "moments": _obj({"which": {"type": "array", "items": {"enum": ["i", "ii", "iii", "iv", "burkholder",
                                                                   "quadratic"]}},
                     "n_grid": _ints, "b": {"type": "integer", "minimum": 2}, "delta": _unit, "p": _expo,
                     "q": _expo, "u": _expo, "instances": _posint, "product_moment": _obj(
                         {"L": _nums, "p": _expo, "m_max": _posint})}),
    "rds": _obj({"phases": {"type": "array", "items": _nonneg_int, "minItems": 2}, "n_grid": _ints,
                 "rel_tol": _pos, "dichotomy": {"type": "boolean"}}),
    "lyapunov": _obj({"matrices": {"type": "array"}, "n_pairs": _posint, "tol": _pos, "n_path": _posint,
                      "radius": _nonneg_int}),
}

SCHEMA = {
    **_obj({
        "experiment": {"enum": sorted(EXPERIMENTS)},
        "seed": _seed,
        "description": {"type": "string"},
        "chain": CHAIN_SCHEMA,
        "observable": OBSERVABLE_SCHEMA,
        "parameters": {"type": "object"},
        "output": _obj({"dir": {"type": "string"}}),
    }, ["experiment", "chain"]),
    "allOf": [
        {"if": {"properties": {"experiment": {"const": e}}, "required": ["experiment"]},
         "then": {"properties": {"parameters": s}}}
        for e, s in PARAMETERS.items()
    ],
}


def _path_str(path) -> str:
    return "/".join(str(p) for p in path) or "<root>"


def validate(cfg: dict, lines: Mapping | None = None, source: str = "<config>") -> None:
    """Raise ConfigError for the first schema or consistency violation (deepest path first)."""
    lines = lines or {}
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = list(validator.iter_errors(cfg))
    if errors:
        leaf = []
        for e in errors:
            leaf.extend(e.context or [e])
        err = max(leaf, key=lambda e: (len(list(e.absolute_path)), -len(str(e.message))))
        path = list(err.absolute_path)
        if err.validator == "additionalProperties":
            extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
            if extra:
                path = path + [extra[0]]
                message = f"unknown key {extra[0]!r}"
            else:
                message = err.message
        else:
            message = err.message
        raise ConfigError(_path_str(path), message, _line(lines, path))
    _semantic(cfg, lines)


def _line(lines, path):
    path = tuple(path)
    while path not in lines and path:
        path = path[:-1]
    return lines.get(path)


def _semantic(cfg: dict, lines) -> None:
    ch = cfg["chain"]
    for key in ("Q",):
        if key in ch:
            Q = np.asarray(ch[key], float)
            if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
                raise ConfigError(f"chain/{key}", "must be a square matrix", _line(lines, ("chain", key)))
            if np.any(Q < 0) or np.any(np.abs(Q.sum(axis=1) - 1) > 1e-9):
                raise ConfigError(f"chain/{key}", "rows must be probability vectors", _line(lines, ("chain", key)))
    if "kernels" in ch:
        for i, K in enumerate(ch["kernels"]):
            K = np.asarray(K, float)
            if K.ndim != 2 or np.any(K < 0) or np.any(np.abs(K.sum(axis=1) - 1) > 1e-9):
                raise ConfigError(f"chain/kernels/{i}", "must be a stochastic matrix",
                                  _line(lines, ("chain", "kernels", i)))
    exp = cfg["experiment"]
    obs = cfg.get("observable")
    needs_obs = exp not in ("mixing", "lyapunov")
    if needs_obs and obs is None:
        raise ConfigError("observable", f"experiment {exp!r} needs an observable", _line(lines, ()))
    if exp == "rds" and (ch.get("kind") != "environment" or (obs or {}).get("kind") != "environment"):
        raise ConfigError("chain/kind", "rds needs an environment chain and observable", _line(lines, ("chain",)))


# ---------------------------------------------------------------------------
# construction


def resolved(cfg: dict, seed_override: int | None = None) -> dict:
    """Copy of the config with defaults filled in and the root seed placed everywhere it is used."""
    out = copy.deepcopy(cfg)
    if seed_override is not None:
        out["seed"] = int(seed_override)
    out.setdefault("seed", 0)
    out.setdefault("parameters", {})
    out["chain"].setdefault("seed", out["seed"])
    if "observable" in out:
        out["observable"].setdefault("seed", out["seed"] + 1)
    return out


def exponent(v) -> float:
    return np.inf if v == "inf" else float(v)


def build_chain(spec: Mapping) -> KernelSequence:
    return make_chain(dict(spec))


def build_observable(spec: Mapping, chain: KernelSequence):
    """Return ``(family, process)``; ``process`` is None unless the mapping describes a process."""
    from . import processes as P
    kind = spec["kind"]
    d = chain.alphabet_size
    a0, b0 = chain.horizon
    if kind == "process":
        fam = spec["family"]
        start, n = spec.get("start"), spec.get("n")
        r = spec.get("radius")
        target = float(spec.get("target", 1e-8))
        if fam == "matprod":
            proc = P.matprod_process(spec["matrices"], chain, r, n, start, target)
        elif fam == "iterfn":
            proc = P.iterfn_process(spec.get("maps", {}), chain, float(spec.get("y0", 0.0)), r,
                                    p=exponent(spec.get("p", 2)), n=n, start=start, target=target)
        elif fam == "linear":
            proc = P.linear_process(spec["coefficients"], spec["g"], chain, r, n, start, target)
        elif fam == "garch":
            proc = P.garch_process(float(spec["mu"]), spec.get("alpha", [0.0]), spec.get("beta", [0.0]),
                                   spec["values"], chain, r, n, start, target)
        else:
            proc = P.lyapunov_process(spec["base"], spec["perturbations"], float(spec.get("eps", 0.0)), chain,
                                      8 if r is None else r, int(spec.get("index", 0)), n, start)
        return proc.observable, proc
    l, r = int(spec.get("l", 0)), int(spec.get("r", 0))
    start = int(spec.get("start", a0 + l))
    if kind == "environment":
        omega = chain.meta.get("omega")
        top = b0 - (2 if "coboundary" in spec else max(r, 1))
        idx = np.arange(start, top + 1)
        if "coboundary" in spec:
            H = np.asarray(spec["coboundary"], float)
            tabs = H[omega[idx + 1 - a0]][:, None, :] - H[omega[idx - a0]][:, :, None]
            return ObservableSequence(0, 1, tabs, int(idx[0])), None
        T = np.asarray(spec["tables"], float)
        return ObservableSequence(l, r, T[omega[idx - a0]], int(idx[0])), None
    if kind == "coboundary":
        rng = np.random.default_rng(int(spec.get("seed", 0)))
        n = int(spec.get("n", (b0 - 1) - start + 1))
        H = rng.standard_normal((n + 1, d)) * float(spec.get("scale", 1.0))
        tabs = H[1:, None, :] - H[:-1, :, None]
        return ObservableSequence(0, 1, tabs, start), None
    n = int(spec.get("n", (b0 - r) - start + 1))
    shape = (d,) * (l + r + 1)
    if kind == "table":
        tab = np.asarray(spec["table"], float)
        if tab.shape != shape:
            raise ConfigError("observable/table", f"expected shape {shape}, got {tab.shape}")
        return ObservableSequence(l, r, np.broadcast_to(tab, (n,) + shape), start), None
    rng = np.random.default_rng(int(spec.get("seed", 0)))
    dist = spec.get("distribution", "normal")
    m = 1 if spec.get("homogeneous", False) else n
    if dist == "normal":
        tabs = rng.standard_normal((m,) + shape)
    elif dist == "uniform":
        tabs = rng.uniform(-1, 1, (m,) + shape)
    else:
        tabs = rng.choice([-1.0, 1.0], size=(m,) + shape)
    tabs = tabs * float(spec.get("scale", 1.0))
    return ObservableSequence(l, r, np.broadcast_to(tabs, (n,) + shape) if m == 1 else tabs, start), None


def to_plain(obj: Any):
    """Convert numpy containers and scalars to JSON-friendly Python objects."""
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if np.isnan(x):
            return "nan"
        if np.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(obj, complex):
        return {"re": to_plain(obj.real), "im": to_plain(obj.imag)}
    return obj
