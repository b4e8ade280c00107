"""Command-line front end: subcommand dispatch, manifests, CSV reports.

Every run writes into --out: a manifest.json echoing the fully resolved
configuration (reloadable as a --config), a report.json with the headline
numbers, and subcommand CSVs with %.17g columns so reruns are byte-identical
regardless of worker count.

Exit codes: 0 success, 1 operational or validation failure, 2 means the
certify pipeline ran fine and the certificate verdict is NO.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .backend import active_backend
from .certificates import (
    exp_functional_exact,
    exp_functional_mc,
    f_of,
    finite_space_certificate,
    spectral_rate,
)
from .config import load_config
from .dynamics import coupled_ensemble, coupled_moment_curve, moment_curve
from .errors import Error
from .metrics import (
    coupling_upper_bound,
    empirical_snapshot,
    exact_wasserstein_p,
    fit_exponential_decay,
    fit_linear_trend,
)
from .rng import stream

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CERT_NO = 2


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def read_curve_csv(path):
    """(t, mean, stderr) triples from a curve CSV written by this tool."""
    with open(path, "r") as fh:
        header = fh.readline().strip().split(",")
        if header[:3] != ["t", "mean", "stderr"]:
            raise Error(f"{path}: expected header t,mean,stderr, got {header}")
        rows = []
        for ln, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.split(",")
            if len(parts) < 3:
                raise Error(f"{path}:{ln}: expected 3 columns")
            rows.append((float(parts[0]), float(parts[1]), float(parts[2])))
    if not rows:
        raise Error(f"{path}: no data rows")
    return rows


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def _write_json(path: Path, payload):
    with open(path, "w") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _fit_dict(fit):
    d = {"t_lo": fit.t_lo, "t_hi": fit.t_hi, "intercept": fit.intercept,
         "n_points": fit.n_points}
    if hasattr(fit, "rate"):
        d.update(rate=fit.rate, rate_ci=list(fit.rate_ci),
                 r_squared=fit.r_squared)
    else:
        d.update(slope=fit.slope, slope_ci=list(fit.slope_ci))
    return d


def cmd_certify(rc, out):
    report = finite_space_certificate(rc.constants_or_err(), rc.generator)
    _write_json(out / "report.json", report.to_dict())
    return EXIT_OK if report.passed else EXIT_CERT_NO


def cmd_simulate(rc, out):
    model = rc.model_or_err()
    cfg = rc.sim_config()
    init = rc.initial_point("initial", cfg)
    p_exp = float(rc.experiment.get("p_exp", model.constants.p))
    curve = moment_curve(model, init, cfg, p_exp)
    write_csv(out / "moments.csv", ["t", "mean", "stderr"], curve)
    report = {
        "p_exp": p_exp,
        "n_paths": cfg.n_paths,
        "final": {"t": curve[-1][0], "mean": curve[-1][1],
                  "stderr": curve[-1][2]},
    }
    try:
        report["tail_trend"] = _fit_dict(fit_linear_trend(curve))
    except ValueError:
        report["tail_trend"] = None  # too few sampled points for a fit
    _write_json(out / "report.json", report)
    return EXIT_OK


def cmd_couple(rc, out):
    model = rc.model_or_err()
    cfg = rc.sim_config()
    inits = (rc.initial_point("initial", cfg),
             rc.initial_point("initial2", cfg))
    p_exp = float(rc.experiment.get("p_exp", model.constants.p))
    curve = coupled_moment_curve(model, inits, cfg, p_exp)
    write_csv(out / "curve.csv", ["t", "mean", "stderr"], curve)
    window = rc.experiment.get("window")
    fit = fit_exponential_decay(curve, None if window is None else tuple(window))
    _write_json(out / "report.json",
                {"p_exp": p_exp, "n_paths": cfg.n_paths,
                 "fit": _fit_dict(fit)})
    return EXIT_OK


def cmd_expfunc(rc, out):
    c = rc.constants_or_err()
    f = f_of(c)
    zeta = spectral_rate(rc.generator, f)
    ts = rc.experiment.get("times", [1.0, 2.0, 5.0])
    start = int(rc.experiment.get("start", 0))
    if not 0 <= start < rc.generator.n_states:
        raise Error(f"experiment.start: must be < {rc.generator.n_states}")
    n_paths, seed = rc.mc_settings()
    exact = [exp_functional_exact(rc.generator, f, t, start) for t in ts]
    means, ses = exp_functional_mc(rc.generator, f, ts, start, n_paths,
                                   stream(seed, 0, "expfunc"))
    write_csv(out / "expfunc.csv", ["t", "exact", "mc_mean", "mc_stderr"],
              list(zip(ts, exact, means, ses)))
    t_ref = float(rc.experiment.get("rate_check_time", 100.0))
    log_rate = float(np.log(
        exp_functional_exact(rc.generator, f, t_ref, start))) / t_ref
    _write_json(out / "report.json", {
        "f": f, "zeta": zeta, "start": start, "n_paths": n_paths,
        "rate_check_time": t_ref,
        "log_rate_residual": log_rate + zeta,
    })
    return EXIT_OK


def cmd_decay(rc, out):
    src = rc.experiment.get("curve_csv")
    if not src:
        raise Error("experiment.curve_csv: required for decay")
    curve = read_curve_csv(src)
    window = rc.experiment.get("window")
    fit = fit_exponential_decay(curve, None if window is None else tuple(window))
    _write_json(out / "report.json",
                {"source": str(src), "fit": _fit_dict(fit)})
    return EXIT_OK


def cmd_ot(rc, out):
    model = rc.model_or_err()
    cfg = rc.sim_config(keep_segments=True)
    if cfg.n_paths > 512:
        raise Error("sim.n_paths: the exact transport solve needs <= 512 paths")
    inits = (rc.initial_point("initial", cfg),
             rc.initial_point("initial2", cfg))
    p_exp = float(rc.experiment.get("p_exp", model.constants.p))
    times = rc.experiment.get("times", [cfg.horizon / 2.0, cfg.horizon])
    runs = coupled_ensemble(model, inits, cfg)
    bound = {t: (m, s) for t, m, s in coupling_upper_bound(runs, p_exp)}
    rows = []
    for t in times:
        t = float(t)
        if t not in bound:
            near = min(bound, key=lambda u: abs(u - t))
            if abs(near - t) > 1e-9 * max(1.0, cfg.horizon):
                raise Error(f"experiment.times: {t:g} is not a sampled "
                            "output time")
            t = near
        mu = empirical_snapshot([co.first for co in runs], t)
        nu = empirical_snapshot([co.second for co in runs], t)
        wp, _ = exact_wasserstein_p(mu, nu, p_exp)
        mean, se = bound[t]
        rows.append((t, wp, mean, se))
    write_csv(out / "ot.csv", ["t", "wp", "coupled_mean", "coupled_stderr"], rows)
    _write_json(out / "report.json", {
        "p": p_exp, "n_paths": cfg.n_paths,
        "wp": {_fmt(t): wp for t, wp, _, _ in rows},
        "dominated": bool(all(wp**p_exp <= m + 2 * s + 1e-12
                              for _, wp, m, s in rows)),
    })
    return EXIT_OK


_COMMANDS = {
    "certify": cmd_certify,
    "simulate": cmd_simulate,
    "couple": cmd_couple,
    "expfunc": cmd_expfunc,
    "decay": cmd_decay,
    "ot": cmd_ot,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rnsfde",
        description="Simulation and ergodicity certificates for "
                    "regime-switching neutral SFDEs with fading memory",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True)
    helps = {
        "certify": "evaluate the moment/ergodicity certificate",
        "simulate": "Monte Carlo moment curve of the state norm",
        "couple": "coupled-pair distance curve with a decay fit",
        "expfunc": "exact vs Monte Carlo chain exponential functionals",
        "decay": "fit an exponential decay rate to a curve CSV",
        "ot": "exact Wasserstein distances between path-law snapshots",
    }
    for name, fn in _COMMANDS.items():
        sp = sub.add_parser(name, help=helps[name])
        sp.add_argument("--config", required=True, help="JSON config or manifest")
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--seed", type=int, default=None, help="override sim.seed")
        sp.add_argument("--paths", type=int, default=None, help="override sim.n_paths")
        sp.add_argument("--horizon", type=float, default=None, help="override sim.horizon")
        sp.add_argument("--step", type=float, default=None, help="override sim.h")
        sp.set_defaults(func=fn)
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {}
    for flag, dotted in (("seed", "sim.seed"), ("paths", "sim.n_paths"),
                         ("horizon", "sim.horizon"), ("step", "sim.h")):
        value = getattr(args, flag)
        if value is not None:
            overrides[dotted] = value
    try:
        rc = load_config(args.config, overrides)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "manifest.json", {
            "subcommand": args.subcommand,
            "config": rc.resolved,
            "seed": None if rc.sim is None else rc.sim["seed"],
            "version": __version__,
            "backend": active_backend(),
        })
        return args.func(rc, out)
    except (Error, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILURE


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
