"""Command-line surface: reproducible experiment orchestration over all
modules.  Reports are JSON on stdout (or CSV via --out/--format); exit status
is 0 on success, 2 on validation errors, 3 on budget errors."""

import argparse
import csv
import io
import json
import sys
from dataclasses import dataclass, field

import numpy as np

from .cascade import CascadeSpec, coincidence_masses, sample_cascade, sample_overlap_array, verify_y_identity
from .core import (
    GramViolation,
    MonotonePath,
    StateDistribution,
    round_distribution,
)
from .diagnostics import (
    gg_polynomial_extension_check,
    gg_residual,
    interpolation_curve,
    legendre_gap,
    sync_fit,
)
from .functional import QuadratureSpec, eval_lower_bound, eval_parisi, eval_phi
from .model import PerturbationSpec, ass_covariance_check, enumerate_free_energy, mcmc_free_energy
from .optimize import outer_maximize
from .util import BudgetError, ValidationError, stream


@dataclass(frozen=True)
class RunConfig:
    """Run-wide settings shared by every subcommand."""

    seed: int = 0
    threads: int = 1
    out: str | None = None
    fmt: str = "json"
    params: dict = field(default_factory=dict)


def _floats(text):
    return [float(v) for v in str(text).split(",") if v != ""]


def _ints(text):
    return [int(v) for v in str(text).split(",") if v != ""]


def build_named_path(name, kappa, x0=0.5, d=None):
    """Resolve a path argument: a built-in name or a JSON file."""
    if d is None:
        d = StateDistribution.uniform(kappa)
    if name == "uniform-r1":
        return MonotonePath.one_step(d, x0)
    if name.endswith(".json"):
        with open(name) as fh:
            return MonotonePath.from_json_dict(json.load(fh))
    raise ValidationError(f"unknown path {name!r} (expected 'uniform-r1' or a .json file)")


def _equal_split_path(kappa, x_levels):
    """An r-level path climbing diag(d)/r per level at the given x's."""
    d = StateDistribution.uniform(kappa)
    r = len(x_levels)
    increments = [np.diag(d.d) / r for _ in range(r - 1)]
    return MonotonePath.from_increments(d, x_levels, increments)


def bound_check(
    N,
    kappa,
    beta,
    n_disorder=200,
    M=8,
    r=1,
    reps=200,
    atoms_per_level=200,
    seed=0,
    threads=1,
    opt_config=None,
):
    """Sandwich report: restricted-set lower value, exact finite-size
    estimate, and the variational upper value with its finite-size slack."""
    mid = enumerate_free_energy(N, kappa, beta, n_disorder, seed, threads=threads)
    config = dict(opt_config or {})
    config.setdefault("threads", threads)
    upper = outer_maximize(kappa, beta, r, config, seed)
    slack = kappa * float(np.log(N + 1)) / N
    delta = round_distribution(upper.d, M)
    lower = eval_lower_bound(M, delta, upper.path, beta, reps, atoms_per_level, seed, threads)
    upper_total = upper.value + slack
    pass_upper = mid.value <= upper_total + 3.0 * mid.std_error
    pass_lower = lower.value - 3.0 * (lower.std_error + mid.std_error) <= mid.value
    return {
        "N": N,
        "kappa": kappa,
        "beta": beta,
        "lower": lower.to_json_dict(),
        "middle": mid.to_json_dict(),
        "upper_value": upper.value,
        "upper_d": [float(v) for v in upper.d.d],
        "finite_size_slack": slack,
        "upper_total": upper_total,
        "pass_upper": bool(pass_upper),
        "pass_lower": bool(pass_lower),
        "passed": bool(pass_upper and pass_lower),
    }


def _cmd_eval_parisi(cfg):
    p = cfg.params
    kappa = int(p.get("kappa", 2))
    beta = float(p.get("beta", 1.0))
    d = StateDistribution(np.asarray(_floats(p["d"]))) if p.get("d") else StateDistribution.uniform(kappa)
    path = build_named_path(str(p.get("path", "uniform-r1")), kappa, float(p.get("x0", 0.5)), d)
    lam = np.asarray(_floats(p.get("lambda", "")) or np.zeros(kappa - 1))
    quad = QuadratureSpec(nodes_per_dim=int(p.get("nodes", 9)))
    res = eval_parisi(lam, d, path, beta, quad)
    out = res.to_json_dict()
    out.update({"kappa": kappa, "beta": beta, "lambda": [float(v) for v in np.atleast_1d(lam)]})
    return out


def _cmd_optimize(cfg):
    p = cfg.params
    kappa = int(p.get("kappa", 2))
    beta = float(p.get("beta", 1.0))
    r = int(p.get("r", 1))
    config = {
        "starts": int(p.get("starts", 8)),
        "grid_mesh": int(p.get("grid_mesh", 8)),
        "maxiter": int(p.get("maxiter", 200)),
        "nonneg_gamma": bool(p.get("nonneg_gamma", False)),
        "threads": cfg.threads,
    }
    return outer_maximize(kappa, beta, r, config, cfg.seed).to_json_dict()


def _cmd_free_energy(cfg):
    p = cfg.params
    n = int(p.get("N", 8))
    kappa = int(p.get("kappa", 2))
    beta = float(p.get("beta", 1.0))
    samples = int(p.get("samples", 200))
    d = StateDistribution(np.asarray(_floats(p["d"]))) if p.get("d") else None
    method = str(p.get("method", "enumerate"))
    if method == "enumerate":
        res = enumerate_free_energy(n, kappa, beta, samples, cfg.seed, d, cfg.threads)
    elif method == "mcmc":
        if d is None:
            d = round_distribution(StateDistribution.uniform(kappa), n)
        res = mcmc_free_energy(n, kappa, beta, d, samples, seed=cfg.seed, threads=cfg.threads)
    else:
        raise ValidationError(f"unknown method {method!r}")
    row = {
        "N": n,
        "kappa": kappa,
        "beta": beta,
        "d": None if d is None else [float(v) for v in d.d],
        "estimate": res.value,
        "se": res.std_error,
        "method": res.method,
    }
    return {"row": row, "diagnostics": res.diagnostics}


def _cmd_bound_check(cfg):
    p = cfg.params
    return bound_check(
        int(p.get("N", 8)),
        int(p.get("kappa", 2)),
        float(p.get("beta", 1.0)),
        n_disorder=int(p.get("samples", 200)),
        M=int(p.get("M", 8)),
        r=int(p.get("r", 1)),
        reps=int(p.get("reps", 200)),
        atoms_per_level=int(p.get("atoms", 200)),
        seed=cfg.seed,
        threads=cfg.threads,
        opt_config={"grid_mesh": int(p.get("grid_mesh", 8))},
    )


def _cmd_cascade_verify(cfg):
    p = cfg.params
    kappa = int(p.get("kappa", 2))
    x_levels = _floats(p.get("x", "0.3,0.6"))
    path = _equal_split_path(kappa, x_levels)
    report = verify_y_identity(
        path,
        float(p.get("beta", 1.0)),
        scale_N=int(p.get("scale_N", 1)),
        reps=int(p.get("reps", 200)),
        atoms_per_level=int(p.get("atoms", 200)),
        seed=cfg.seed,
        threads=cfg.threads,
    )
    spec = CascadeSpec(tuple(x_levels), int(p.get("atoms", 200)))
    masses, mass_se = coincidence_masses(spec, int(p.get("mass_samples", 200)), seed=cfg.seed)
    targets = np.append(np.diff(np.concatenate([[0.0], x_levels])), 1.0 - x_levels[-1])
    report["coincidence"] = {
        "estimates": [float(v) for v in masses],
        "std_errors": [float(v) for v in mass_se],
        "targets": [float(v) for v in targets],
    }
    return report


def _default_cascade_arrays(kappa, x_levels, n_arrays, n_replicas, atoms, seed):
    """Overlap arrays sampled from a cascade with an equal-split generator."""
    path = _equal_split_path(kappa, x_levels)
    spec = CascadeSpec(tuple(x_levels), atoms)
    q = np.array([path.trace_at(x) for x in np.concatenate([[0.0], x_levels])])
    q[0] = 0.0
    gammas = path.gammas

    def phi(t):
        idx = int(np.argmin(np.abs(np.trace(gammas, axis1=1, axis2=2) - t)))
        return gammas[idx]

    arrays = []
    for i in range(n_arrays):
        rng = stream(seed, 0xA44, i)
        sample = sample_cascade(spec, rng)
        arrays.append(sample_overlap_array(sample, q, phi, n_replicas, rng))
    return arrays


def _cmd_diag_gg(cfg):
    p = cfg.params
    kappa = int(p.get("kappa", 2))
    x_levels = _floats(p.get("x", "0.3,0.6"))
    arrays = _default_cascade_arrays(
        kappa,
        x_levels,
        int(p.get("arrays", 400)),
        int(p.get("replicas", 4)),
        int(p.get("atoms", 200)),
        cfg.seed,
    )
    n = int(p.get("n", 2))
    spec = PerturbationSpec(p=1, n=(1,), lambdas=np.ones((1, kappa)) / kappa)
    res_const = gg_residual(arrays, lambda a: 1.0, n, spec, seed=cfg.seed)
    res_poly = gg_residual(arrays, lambda a: float(a.traces[0, 1]), n, spec, seed=cfg.seed)
    res_ext = gg_polynomial_extension_check(
        arrays, lambda forms: float(np.minimum(forms, 0.5).sum()), n, spec, seed=cfg.seed
    )
    return {"constant_f": res_const, "trace_f": res_poly, "extension": res_ext}


def _cmd_diag_sync(cfg):
    p = cfg.params
    kappa = int(p.get("kappa", 2))
    arrays = _default_cascade_arrays(
        kappa,
        _floats(p.get("x", "0.3,0.6")),
        int(p.get("arrays", 100)),
        int(p.get("replicas", 8)),
        int(p.get("atoms", 200)),
        cfg.seed,
    )
    fit = sync_fit(arrays, n_bins=int(p.get("bins", 20)))
    return {
        "grid": [float(v) for v in fit.grid],
        "phi_hat": [[[float(v) for v in row] for row in m] for m in fit.phi_hat],
        "residual": fit.residual,
        "lipschitz_hat": fit.lipschitz_hat,
        "bin_width": fit.bin_width,
    }


def _cmd_diag_interp(cfg):
    p = cfg.params
    kappa = int(p.get("kappa", 2))
    n = int(p.get("N", 4))
    d = StateDistribution(np.asarray(_floats(p["d"]))) if p.get("d") else round_distribution(
        StateDistribution.uniform(kappa), n
    )
    path = MonotonePath.one_step(d, float(p.get("x0", 0.3)))
    t_grid = _floats(p.get("t", "")) or list(np.linspace(0.0, 1.0, int(p.get("t_points", 6))))
    return interpolation_curve(
        n,
        kappa,
        d,
        float(p.get("beta", 1.0)),
        path,
        t_grid,
        reps=int(p.get("reps", 300)),
        atoms_per_level=int(p.get("atoms", 200)),
        seed=cfg.seed,
        threads=cfg.threads,
    )


def _cmd_diag_legendre(cfg):
    p = cfg.params
    kappa = int(p.get("kappa", 2))
    d = StateDistribution(np.asarray(_floats(p["d"]))) if p.get("d") else StateDistribution.uniform(kappa)
    path = MonotonePath.one_step(d, float(p.get("x0", 0.5)))
    lam_max = float(p.get("lambda_max", 1.0))
    lam_points = int(p.get("lambda_points", 9))
    base = np.linspace(-lam_max, lam_max, lam_points)
    if kappa == 2:
        grid = [np.array([v]) for v in base]
    else:
        grid = [np.full(kappa - 1, v) for v in base]
    return legendre_gap(
        d,
        path,
        float(p.get("beta", 1.0)),
        grid,
        _ints(p.get("M", "2,4,8")),
        reps=int(p.get("reps", 200)),
        atoms_per_level=int(p.get("atoms", 200)),
        seed=cfg.seed,
        threads=cfg.threads,
    )


def _cmd_ass_check(cfg):
    p = cfg.params
    return ass_covariance_check(
        int(p.get("N", 4)),
        int(p.get("M", 2)),
        int(p.get("kappa", 2)),
        n_pairs=int(p.get("pairs", 3)),
        n_draws=int(p.get("draws", 10_000)),
        seed=cfg.seed,
    )


_COMMANDS = {
    "eval-parisi": _cmd_eval_parisi,
    "optimize": _cmd_optimize,
    "free-energy": _cmd_free_energy,
    "bound-check": _cmd_bound_check,
    "cascade-verify": _cmd_cascade_verify,
    "diag-gg": _cmd_diag_gg,
    "diag-sync": _cmd_diag_sync,
    "diag-interp": _cmd_diag_interp,
    "diag-legendre": _cmd_diag_legendre,
    "ass-check": _cmd_ass_check,
}

_PARAM_FLAGS = [
    "kappa", "beta", "N", "M", "r", "d", "x", "x0", "t", "t_points", "lambda",
    "path", "nodes", "samples", "reps", "atoms", "starts", "grid_mesh",
    "maxiter", "method", "arrays", "replicas", "bins", "n", "draws", "pairs",
    "lambda_max", "lambda_points", "mass_samples", "scale_N",
]


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="pottsglass",
        description="Potts glass free energy: simulation, variational bounds, and replica diagnostics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--threads", type=int, default=None)
        sp.add_argument("--out", default=None)
        sp.add_argument("--format", dest="fmt", choices=["json", "csv"], default=None)
        sp.add_argument("--config", default=None, help="JSON config file merged under flags")
        sp.add_argument("--nonneg-gamma", dest="nonneg_gamma", action="store_true", default=None)
        for flag in _PARAM_FLAGS:
            sp.add_argument(f"--{flag.replace('_', '-')}", dest=flag, default=None)
    return parser


def _merge_config(args):
    file_cfg = {}
    if args.config:
        with open(args.config) as fh:
            file_cfg = json.load(fh)
    params = dict(file_cfg.get("params", {}))
    for flag in _PARAM_FLAGS + ["nonneg_gamma"]:
        v = getattr(args, flag, None)
        if v is not None:
            params[flag] = v
    seed = args.seed if args.seed is not None else int(file_cfg.get("seed", 0))
    threads = args.threads if args.threads is not None else int(file_cfg.get("threads", 1))
    out = args.out if args.out is not None else file_cfg.get("out")
    fmt = args.fmt if args.fmt is not None else file_cfg.get("format", "json")
    return RunConfig(seed=seed, threads=threads, out=out, fmt=fmt, params=params)


def _csv_rows(report):
    if "rows" in report and isinstance(report["rows"], list):
        return report["rows"]
    if "row" in report:
        return [report["row"]]
    if "t_grid" in report:
        return [
            {"t": t, "estimate": e, "se": s}
            for t, e, s in zip(report["t_grid"], report["estimates"], report["std_errors"])
        ]
    return [{"key": k, "value": v} for k, v in report.items() if np.isscalar(v)]


def _format_csv(report):
    rows = _csv_rows(report)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0].keys()))
    writer.writeheader()
    for row in rows:
        writer.writerow(
            {k: (format(v, ".17g") if isinstance(v, float) else v) for k, v in row.items()}
        )
    return buf.getvalue()


def render_report(report, fmt="json"):
    if fmt == "csv":
        return _format_csv(report)
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def dispatch(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    cfg = _merge_config(args)
    report = _COMMANDS[args.command](cfg)
    text = render_report(report, cfg.fmt)
    if cfg.out:
        with open(cfg.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def main(argv=None):
    try:
        return dispatch(argv)
    except BudgetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ValidationError, GramViolation, OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
