"""JSON run configuration: parsing, strict validation, resolved echo.

One flat JSON object per run. Validation failures raise ConfigError whose
message always starts with the dotted path of the offending field, so a CLI
user can go straight to the bad line. The resolved dictionary (defaults
filled in, overrides applied) is what run manifests echo; loading a manifest
again reproduces the run.
"""

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .certificates import DissipativityConstants
from .chain import Generator
from .delay import DelayKernel, moment
from .dynamics import ModelSpec, SimConfig, memory_nodes
from .errors import ConfigError, InfiniteMoment
from .segments import MarkedPoint, Segment

_MODEL_COEFFS = ("neutral_coeff", "drift_state", "drift_history",
                 "drift_const", "noise_const", "noise_history")
_SIM_FIELDS = ("h", "horizon", "n_paths", "seed", "sample_every",
               "fixed_point_tol", "fixed_point_max_iter", "tail_tol",
               "t_mem", "keep_segments")
_EXPLICIT_CONSTANTS = ("kappa", "alpha", "beta", "gamma")


def _err(path, msg):
    raise ConfigError(f"{path}: {msg}")


def _require_dict(block, path):
    if not isinstance(block, dict):
        _err(path, "must be a JSON object")
    return block


def _reject_unknown(block, path, allowed):
    for key in block:
        if key not in allowed:
            _err(f"{path}.{key}" if path else key, "unknown field")


def _number(block, path, key, default=None, required=False, positive=False,
            nonnegative=False):
    if key not in block or block[key] is None:
        if required:
            _err(f"{path}.{key}", "required")
        return default
    v = block[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        _err(f"{path}.{key}", f"must be a number, got {v!r}")
    v = float(v)
    if not math.isfinite(v):
        _err(f"{path}.{key}", "must be finite")
    if positive and not v > 0:
        _err(f"{path}.{key}", "must be > 0")
    if nonnegative and v < 0:
        _err(f"{path}.{key}", "must be >= 0")
    return v


def _integer(block, path, key, default=None, required=False, minimum=None):
    if key not in block or block[key] is None:
        if required:
            _err(f"{path}.{key}", "required")
        return default
    v = block[key]
    if isinstance(v, bool) or not isinstance(v, int):
        _err(f"{path}.{key}", f"must be an integer, got {v!r}")
    if minimum is not None and v < minimum:
        _err(f"{path}.{key}", f"must be >= {minimum}")
    return int(v)


def parse_kernel(block) -> DelayKernel:
    block = _require_dict(block, "kernel")
    if "type" in block:
        kind = block["type"]
        if kind == "exponential":
            _reject_unknown(block, "kernel", {"type", "rate"})
            rate = _number(block, "kernel", "rate", required=True, positive=True)
            return DelayKernel.exponential(rate)
        if kind == "dirac":
            _reject_unknown(block, "kernel", {"type", "delay"})
            delay = _number(block, "kernel", "delay", default=0.0, nonnegative=True)
            return DelayKernel.dirac(-delay)
        _err("kernel.type", f"unknown kernel type {kind!r} "
             "(use 'exponential', 'dirac', or give atoms/exp lists)")
    _reject_unknown(block, "kernel", {"atoms", "exp"})
    if not block.get("atoms") and not block.get("exp"):
        _err("kernel", "required (give type or atoms/exp lists)")
    try:
        return DelayKernel.from_config(block)
    except (ValueError, TypeError) as e:
        _err("kernel", str(e))


def parse_generator(block) -> Generator:
    if block is None:
        _err("generator", "required")
    if isinstance(block, dict):
        _reject_unknown(block, "generator", {"rates", "bound_M"})
        rates = block.get("rates")
        bound = block.get("bound_M")
    else:
        rates, bound = block, None
    if rates is None:
        _err("generator.rates", "required")
    try:
        return Generator(rates, bound_M=bound)
    except (ValueError, TypeError) as e:
        _err("generator", str(e))


def _regime_vector(block, path, key, n_states):
    v = np.atleast_1d(np.asarray(block[key], dtype=float))
    if v.size == 1:
        v = np.full(n_states, v[0])
    if v.shape != (n_states,):
        _err(f"{path}.{key}", f"must be a scalar or a length-{n_states} list")
    return v


def parse_constants(block, kernel, n_states):
    """Returns (r, p, p0, explicit DissipativityConstants or None)."""
    block = _require_dict(block, "constants")
    _reject_unknown(block, "constants",
                    {"r", "p", "p0", *_EXPLICIT_CONSTANTS})
    r = _number(block, "constants", "r", required=True, positive=True)
    p = _number(block, "constants", "p", default=2.0)
    p0 = _number(block, "constants", "p0", default=0.01, positive=True)
    if p < 2:
        _err("constants.p", "must be >= 2")
    given = [k for k in _EXPLICIT_CONSTANTS if k in block]
    if not given:
        return r, p, p0, None
    if len(given) != len(_EXPLICIT_CONSTANTS):
        missing = sorted(set(_EXPLICIT_CONSTANTS) - set(given))
        _err("constants", "kappa/alpha/beta/gamma must be given together "
             f"(missing {', '.join(missing)})")
    try:
        c = DissipativityConstants(
            p=p, p0=p0, r=r,
            kappa=_number(block, "constants", "kappa", required=True),
            alpha=_regime_vector(block, "constants", "alpha", n_states),
            beta=_regime_vector(block, "constants", "beta", n_states),
            gamma=_number(block, "constants", "gamma", required=True),
            kernel=kernel,
        )
    except ValueError as e:
        _err("constants", str(e))
    return r, p, p0, c


def parse_model(block, kernel, generator, r, p, p0, constants) -> ModelSpec:
    block = _require_dict(block, "model")
    _reject_unknown(block, "model", {"family", "dim", *_MODEL_COEFFS})
    family = block.get("family", "builtin_linear")
    if family != "builtin_linear":
        _err("model.family", f"unknown family {family!r} (only 'builtin_linear' "
             "is configurable; custom coefficients need the Python API)")
    dim = _integer(block, "model", "dim", default=1, minimum=1)
    coeffs = {}
    for key in _MODEL_COEFFS:
        if key in block:
            coeffs[key] = block[key]
    try:
        return ModelSpec.builtin_linear(
            kernel, generator, r=r, p=p, p0=p0, dim=dim,
            constants=constants, **coeffs)
    except (ValueError, TypeError) as e:
        _err("model", str(e))


def parse_sim_block(block) -> dict:
    block = _require_dict(block, "sim")
    _reject_unknown(block, "sim", set(_SIM_FIELDS))
    out = {
        "h": _number(block, "sim", "h", positive=True),
        "horizon": _number(block, "sim", "horizon", positive=True),
        "n_paths": _integer(block, "sim", "n_paths", default=1, minimum=1),
        "seed": _integer(block, "sim", "seed", default=0, minimum=0),
        "sample_every": _integer(block, "sim", "sample_every", default=1, minimum=1),
        "fixed_point_tol": _number(block, "sim", "fixed_point_tol",
                                   default=1e-12, positive=True),
        "fixed_point_max_iter": _integer(block, "sim", "fixed_point_max_iter",
                                         default=50, minimum=1),
        "tail_tol": _number(block, "sim", "tail_tol", default=1e-8, positive=True),
        "t_mem": _number(block, "sim", "t_mem", default=None, positive=True),
        "keep_segments": block.get("keep_segments", False),
    }
    if not isinstance(out["keep_segments"], bool):
        _err("sim.keep_segments", "must be true or false")
    return out


def parse_initial_block(block, path) -> dict:
    block = _require_dict(block, path)
    _reject_unknown(block, path, {"constant", "weighted_constant", "zero", "regime"})
    forms = [k for k in ("constant", "weighted_constant", "zero") if k in block]
    if len(forms) != 1:
        _err(path, "give exactly one of constant / weighted_constant / zero")
    regime = _integer(block, path, "regime", default=0, minimum=0)
    return {"form": forms[0], "value": block[forms[0]], "regime": regime}


@dataclass
class RunConfig:
    """Validated run configuration plus the resolved JSON echo."""

    kernel: DelayKernel
    generator: Generator
    r: float
    p: float
    p0: float
    explicit_constants: Optional[DissipativityConstants]
    model: Optional[ModelSpec]
    sim: Optional[dict]
    initial: Optional[dict]
    initial2: Optional[dict]
    experiment: dict = field(default_factory=dict)
    resolved: dict = field(default_factory=dict)

    def constants_or_err(self) -> DissipativityConstants:
        if self.explicit_constants is not None:
            return self.explicit_constants
        if self.model is not None:
            return self.model.constants
        _err("constants", "kappa/alpha/beta/gamma required "
             "(or give a model block to derive them)")

    def model_or_err(self) -> ModelSpec:
        if self.model is None:
            _err("model", "required for this subcommand")
        return self.model

    def sim_config(self, keep_segments=None) -> SimConfig:
        if self.sim is None:
            _err("sim", "required for this subcommand")
        for key in ("h", "horizon"):
            if self.sim[key] is None:
                _err(f"sim.{key}", "required")
        kw = dict(self.sim)
        if keep_segments is not None:
            kw["keep_segments"] = keep_segments
        try:
            return SimConfig(**kw)
        except ValueError as e:
            _err("sim", str(e))

    def mc_settings(self):
        """(n_paths, seed) for chain-only Monte Carlo (no h/horizon needed)."""
        if self.sim is None:
            _err("sim", "required for this subcommand")
        return self.sim["n_paths"], self.sim["seed"]

    def initial_point(self, which, cfg: SimConfig) -> MarkedPoint:
        block = self.initial if which == "initial" else self.initial2
        if block is None:
            _err(which, "required for this subcommand")
        model = self.model_or_err()
        n_hist = memory_nodes(model, cfg)
        form, value, regime = block["form"], block["value"], block["regime"]
        if regime >= self.generator.n_states:
            _err(f"{which}.regime", f"must be < {self.generator.n_states}")
        try:
            if form == "constant":
                seg = Segment.constant(value, self.r, cfg.h, n_hist, dim=model.dim)
            elif form == "weighted_constant":
                seg = Segment.weighted_constant(value, self.r, cfg.h, n_hist,
                                                dim=model.dim)
            else:
                seg = Segment.zero(self.r, cfg.h, n_hist, dim=model.dim)
            if seg.dim != model.dim:
                raise ValueError(f"dimension {seg.dim} != model dim {model.dim}")
            return MarkedPoint(seg, regime)
        except ValueError as e:
            _err(which, str(e))


_TOP_LEVEL = {"model", "kernel", "generator", "constants", "sim",
              "initial", "initial2", "experiment"}


def load_config(source, overrides=None) -> RunConfig:
    """Parse and validate a config dict, JSON text path, or manifest path.

    `overrides` maps dotted sim fields ('sim.seed', 'sim.n_paths',
    'sim.horizon', 'sim.h') to replacement values, applied before
    validation so the resolved echo includes them.
    """
    if isinstance(source, dict):
        data = json.loads(json.dumps(source))  # private copy, json types only
    else:
        try:
            with open(source, "r") as fh:
                data = json.load(fh)
        except OSError as e:
            _err("config", f"cannot read {source}: {e}")
        except json.JSONDecodeError as e:
            _err("config", f"invalid JSON in {source}: {e}")
    data = _require_dict(data, "config")
    if "config" in data and "subcommand" in data:
        data = _require_dict(data["config"], "config")  # run manifest echo
    _reject_unknown(data, "", _TOP_LEVEL)

    for dotted, value in (overrides or {}).items():
        section, key = dotted.split(".", 1)
        data.setdefault(section, {})
        if not isinstance(data[section], dict):
            _err(section, "must be a JSON object")
        data[section][key] = value

    if "kernel" not in data:
        _err("kernel", "required")
    kernel = parse_kernel(data["kernel"])
    if "generator" not in data:
        _err("generator", "required")
    generator = parse_generator(data["generator"])
    if "constants" not in data:
        _err("constants", "required")
    r, p, p0, explicit = parse_constants(data["constants"], kernel,
                                         generator.n_states)
    if explicit is not None and explicit.n_states != generator.n_states:
        _err("constants.alpha", f"length must equal generator size "
             f"{generator.n_states}")

    # T_mem policy must be satisfiable: the p*r fallback moment has to exist
    try:
        moment(kernel, p * r)
    except InfiniteMoment:
        _err("kernel", f"exponential moment at p*r = {p * r:g} diverges; "
             "the history-window policy cannot be satisfied")

    model = None
    if "model" in data:
        model = parse_model(data["model"], kernel, generator, r, p, p0, explicit)
    sim = parse_sim_block(data["sim"]) if "sim" in data else None
    initial = (parse_initial_block(data["initial"], "initial")
               if "initial" in data else None)
    initial2 = (parse_initial_block(data["initial2"], "initial2")
                if "initial2" in data else None)
    experiment = _require_dict(data.get("experiment", {}), "experiment")

    resolved = {
        "kernel": kernel.to_config(),
        "generator": {"rates": generator.rates.tolist(),
                      "bound_M": generator.bound_M},
        "constants": {"r": r, "p": p, "p0": p0},
    }
    if explicit is not None:
        resolved["constants"].update(
            kappa=explicit.kappa, alpha=explicit.alpha.tolist(),
            beta=explicit.beta.tolist(), gamma=explicit.gamma)
    if "model" in data:
        resolved["model"] = {"family": "builtin_linear",
                             **{k: data["model"][k] for k in data["model"]
                                if k != "family"}}
    if sim is not None:
        resolved["sim"] = {k: v for k, v in sim.items() if v is not None}
    if initial is not None:
        resolved["initial"] = {initial["form"]: initial["value"],
                               "regime": initial["regime"]}
    if initial2 is not None:
        resolved["initial2"] = {initial2["form"]: initial2["value"],
                                "regime": initial2["regime"]}
    if experiment:
        resolved["experiment"] = experiment

    return RunConfig(
        kernel=kernel, generator=generator, r=r, p=p, p0=p0,
        explicit_constants=explicit, model=model, sim=sim,
        initial=initial, initial2=initial2, experiment=experiment,
        resolved=resolved,
    )
