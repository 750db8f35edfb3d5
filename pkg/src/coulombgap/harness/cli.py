"""Command-line entry point.

Every command reads a JSON config, computes in memory, and only then moves
its files into the output directory, so a failure leaves no partial output.
Exit codes: 0 success, 2 configuration or precondition error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import shutil
import sys
import tempfile
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from ..conformal import EllipticOutpost, annulus_dirichlet, heine_from_geometry
from ..errors import ConfigError, DomainViolation, MassMismatch, NoGap, NumericFailure
from ..fluctuation import GapContext, equilibrium_integral, exact_linear_cgf, exact_linear_moments, predict_total
from ..orthopoly import (
    PerturbedWeight,
    QuasiPolyData,
    bifurcation_errors,
    build_log_norm_table,
    cgf_comparison_csv,
    cgf_count_exact_curve,
    cgf_count_predicted,
    count_pmf_exact,
)
from ..potential import GapGeometry, RadialPotential, floor_count, frac_part, gap_constants, solve_gap
from ..qdist import dnorm_from_heine, dnorm_pmf, heine_mean, heine_pmf, heine_variance
from ..sampler import bootstrap_se, build_sampler, empirical_cgf, empirical_tv, sample_counts, sample_linear_stat
from .config import SCHEMA_VERSION, ExperimentConfig, load_config, parse_test_function
from .freeenergy import free_energy_fit, gap_records, gn_evaluate, log_partition

THREADS_ENV = "COULOMBGAP_THREADS"


# --------------------------------------------------------------------------
# Output handling
# --------------------------------------------------------------------------


class Outputs:
    """Files staged in memory and committed atomically at the end of a command."""

    def __init__(self, cfg: ExperimentConfig, command: str) -> None:
        self.cfg = cfg
        self.command = command
        self.files: dict[str, str] = {}

    @property
    def meta(self) -> dict[str, Any]:
        return {"schema_version": SCHEMA_VERSION, "command": self.command, "config_hash": self.cfg.hash(), "seed": self.cfg.seed}

    def header(self) -> list[str]:
        return [f"{k}={v}" for k, v in self.meta.items()]

    def json(self, name: str, payload: dict[str, Any]) -> None:
        self.files[name] = json.dumps({**self.meta, **payload}, indent=2, sort_keys=True, default=_jsonable) + "\n"

    def text(self, name: str, body: str) -> None:
        self.files[name] = body

    def commit(self, out_dir: Path) -> list[Path]:
        out_dir.mkdir(parents=True, exist_ok=True)
        stage = Path(tempfile.mkdtemp(prefix=".staging-", dir=out_dir))
        try:
            for name, body in self.files.items():
                (stage / name).write_text(body)
            written = []
            for name in self.files:
                os.replace(stage / name, out_dir / name)
                written.append(out_dir / name)
            return written
        finally:
            shutil.rmtree(stage, ignore_errors=True)


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not serialisable: {type(obj).__name__}")


# --------------------------------------------------------------------------
# Shared setup
# --------------------------------------------------------------------------


def _geometry(pot: RadialPotential, mode: str) -> GapGeometry:
    tau = 1.0 if mode == "outpost" else None
    sol = solve_gap(pot, tau)
    if mode == "gap" and abs(sol.tau_star - 1.0) < 1e-10:
        raise ConfigError("mode 'gap' needs a potential whose inner mass is below 1")
    return gap_constants(pot, sol.b0, sol.a1, sol.tau_star)


def _count_model(geom: GapGeometry, n: int):
    """(model pmf on shifted counts, shift) for the outer count."""
    plus, _ = geom.heine_pair(n)
    if geom.is_outpost:
        return (lambda j: heine_pmf(np.asarray(j), plus)), 0
    dn = dnorm_from_heine(plus)
    return (lambda j: dnorm_pmf(np.asarray(j), dn)), n - floor_count(n, geom.tau_star)


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------


def cmd_predict(cfg: ExperimentConfig, out: Outputs) -> None:
    pot = cfg.load_potential()
    geom = _geometry(pot, cfg.mode)
    qp = QuasiPolyData.from_radial(pot, geom)
    ctx = GapContext.from_potential(pot, geom.tau_star) if cfg.mode == "gap" else None
    per_n = []
    for n in cfg.n:
        plus, minus = geom.heine_pair(n)
        rec: dict[str, Any] = {
            "n": n,
            "x_n": frac_part(n, geom.tau_star),
            "theta_plus": plus.theta,
            "q": plus.q,
            "heine_mean": heine_mean(plus),
            "heine_variance": heine_variance(plus),
            "cgf_count": [{"s": s, "predicted": cgf_count_predicted(qp, n, s)} for s in cfg.s_grid],
        }
        if cfg.mode == "gap":
            rec["theta_minus"] = minus.theta
            rec["dnorm_theta"] = dnorm_from_heine(plus).theta
            rec["fluct"] = {}
            for spec in cfg.test_functions:
                pred = predict_total(parse_test_function(spec, pot), ctx, n)
                rec["fluct"][spec] = {**pred.to_dict(), "cgf": [{"t": t, "predicted": pred.cgf(t)} for t in cfg.t_grid]}
        per_n.append(rec)
    out.json("predict.json", {"mode": cfg.mode, "geometry": geom.to_dict(), "results": per_n})


def cmd_norms(cfg: ExperimentConfig, out: Outputs) -> None:
    pot = cfg.load_potential()
    geom = _geometry(pot, cfg.mode)
    qp = QuasiPolyData.from_radial(pot, geom)
    w = PerturbedWeight(pot)
    summary = []
    for n in cfg.n:
        if any(abs(s) > math.log(n) for s in cfg.s_grid):
            raise ConfigError(f"s_grid exceeds log(n) = {math.log(n):.4f} for n = {n}")
        table = build_log_norm_table(w, qp, n)
        out.text(f"norms_n{n}.csv", table.to_csv(out.header() + [f"n={n}"]))
        _, errs = bifurcation_errors(w, qp, n)
        exact = cgf_count_exact_curve(w, n, cfg.s_grid, geom.tau_star)
        pred = [cgf_count_predicted(qp, n, s) for s in cfg.s_grid]
        out.text(f"cgf_n{n}.csv", cgf_comparison_csv(cfg.s_grid, exact, pred, out.header() + [f"n={n}"]))
        summary.append({"n": n, "max_bifurcation_error": float(np.max(errs)), "max_cgf_error": float(np.max(np.abs(exact - np.array(pred))))})
    payload: dict[str, Any] = {"mode": cfg.mode, "geometry": geom.to_dict(), "tables": summary}
    if len(cfg.n) > 1:
        errs = [s["max_bifurcation_error"] for s in summary]
        payload["decay"] = {"ratios": [b / a for a, b in zip(errs[:-1], errs[1:])], "n": list(cfg.n)}
    out.json("norms_summary.json", payload)


def cmd_simulate(cfg: ExperimentConfig, out: Outputs) -> None:
    pot = cfg.load_potential()
    geom = _geometry(pot, cfg.mode)
    w = PerturbedWeight(pot)
    results = []
    for n in cfg.n:
        ms = build_sampler(w, n, seed=cfg.seed)
        thr = cfg.threshold if cfg.threshold is not None else w.omega.threshold
        batch = sample_counts(ms, thr, cfg.replicas, threads=cfg.threads)
        model, shift = _count_model(geom, n)
        exact = count_pmf_exact(w, n)
        out.text(f"counts_n{n}.csv", batch.to_csv(out.header() + [f"n={n}", f"threshold={thr!r}"]))
        rec = batch.summary(model, shift)
        rec["model"] = "heine" if geom.is_outpost else "discrete-normal"
        if batch.replicas:
            rec["tv_vs_exact"] = empirical_tv(batch, lambda j: exact[np.clip(j, 0, n)] * ((j >= 0) & (j <= n)))
        results.append(rec)
    out.json("simulate.json", {"mode": cfg.mode, "geometry": geom.to_dict(), "results": results})


def cmd_fluct(cfg: ExperimentConfig, out: Outputs) -> None:
    pot = cfg.load_potential()
    ctx = GapContext.from_potential(pot, 1.0 if cfg.mode == "outpost" and len(pot.pieces) > 1 else None)
    w = PerturbedWeight(pot)
    results = []
    for n in cfg.n:
        ms = build_sampler(w, n, seed=cfg.seed) if cfg.replicas else None
        for spec in cfg.test_functions:
            f = parse_test_function(spec, pot)
            pred = predict_total(f, ctx, n)
            sigma = equilibrium_integral(f, pot, ctx.droplet)
            exact = exact_linear_moments(w, n, f, sigma)
            rec: dict[str, Any] = {
                "n": n,
                "test_function": spec,
                "prediction": pred.to_dict(),
                "exact_mean": exact.mean,
                "exact_variance": exact.variance,
                "cgf": [],
            }
            exact_cgf = exact_linear_cgf(w, n, f, sigma, cfg.t_grid)
            mc = None
            if ms is not None:
                mc = sample_linear_stat(ms, f, sigma, cfg.replicas, threads=cfg.threads).lin_stats
                rec["mc_mean"] = float(np.mean(mc))
                rec["mc_variance"] = float(np.var(mc, ddof=1)) if mc.size > 1 else None
            for t, ex in zip(cfg.t_grid, exact_cgf):
                row = {"t": t, "predicted": pred.cgf(t), "exact": float(ex)}
                if mc is not None:
                    row["empirical"] = empirical_cgf(mc, t)
                    row["bootstrap_se"] = bootstrap_se(mc, lambda v, t=t: empirical_cgf(v, t), seed=cfg.seed)
                rec["cgf"].append(row)
            results.append(rec)
    out.json("fluct.json", {"mode": cfg.mode, "results": results})


def cmd_conformal(cfg: ExperimentConfig, out: Outputs) -> None:
    try:
        eo = EllipticOutpost(**cfg.ellipse)
    except ValueError as exc:
        raise ConfigError(f"ellipse: {exc}") from exc
    sol = annulus_dirichlet(eo.map, eo.rho, eo.half_log_laplacian)
    trace = annulus_dirichlet(eo.map, eo.rho, lambda z: np.real(1.0 / z))
    r1 = eo.map.capacity
    r2 = eo.rho * r1
    heine = heine_from_geometry(r1, r2, sol.c)
    out.json(
        "conformal.json",
        {
            "ellipse": {"t": eo.t, "rho": eo.rho, "delta2": eo.delta2},
            "capacity_inner": r1,
            "capacity_outer": r2,
            "c": sol.c,
            "c_expected": eo.c,
            "compat_residual": sol.compat_residual,
            "modes": sol.modes,
            "c_holomorphic_trace": trace.c,
            "theta": heine.theta,
            "q": heine.q,
        },
    )


def cmd_free_energy(cfg: ExperimentConfig, out: Outputs) -> None:
    if len(cfg.n) < 6:
        raise ConfigError("free-energy needs at least six values of n")
    pot = cfg.load_potential()
    gaps = cfg.gaps or (gap_records(pot) if len(pot.pieces) > 1 else ())
    log_z = [log_partition(pot, n) for n in cfg.n]
    fit = free_energy_fit(log_z, cfg.n, gaps)
    lines = ["n,log_z,residual,gn,gn_projected"]
    for i, n in enumerate(cfg.n):
        lines.append(f"{n},{fit.log_z[i]!r},{fit.residuals[i]!r},{fit.gn[i]!r},{fit.gn_projected[i]!r}")
    out.text("free_energy.csv", "".join(f"# {h}\n" for h in out.header() + ["status=exploratory"]) + "\n".join(lines) + "\n")
    out.json(
        "free_energy.json",
        {
            "status": "exploratory",
            "coefficients": dict(zip(["C0", "C1", "C2", "C3", "C4"], fit.coefficients.tolist())),
            "rms_residual": fit.rms_residual,
            "residual_amplitude": fit.residual_amplitude,
            "gn_amplitude": 0.5 * float(np.max(fit.gn) - np.min(fit.gn)) if gaps else 0.0,
            "correlation": fit.correlation,
            "correlation_projected": fit.correlation_projected,
            "gaps": [g.__dict__ for g in gaps],
            "gn_terms": [{"n": n, **{"value": gn_evaluate(gaps, n).value}} for n in cfg.n] if gaps else [],
        },
    )


COMMANDS = {
    "predict": cmd_predict,
    "norms": cmd_norms,
    "simulate": cmd_simulate,
    "fluct": cmd_fluct,
    "conformal": cmd_conformal,
    "free-energy": cmd_free_energy,
}


# --------------------------------------------------------------------------
# Entry point
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coulombgap", description="Count laws and fluctuations of 2D Coulomb gases with gaps and outposts.")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="JSON experiment configuration")
    parser.add_argument("--out", help="output directory (overrides the config)")
    parser.add_argument("--seed", type=int, help="64-bit seed (overrides the config)")
    parser.add_argument("--threads", type=int, help=f"worker threads (overrides {THREADS_ENV} and the config)")
    return parser


def _threads(args: argparse.Namespace) -> int | None:
    if args.threads is not None:
        return args.threads
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    return None


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    try:
        cfg = load_config(args.config)
        threads = _threads(args)
        if threads is not None and threads < 1:
            raise ConfigError("threads must be at least 1")
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        cfg = cfg.with_overrides(seed=args.seed, threads=threads, output=args.out)
        out = Outputs(cfg, args.command)
        COMMANDS[args.command](cfg, out)
        out_dir = Path(cfg.output)
        if not out_dir.is_absolute() and args.out is None:
            out_dir = Path(cfg.base_dir) / out_dir
        for path in out.commit(out_dir):
            print(path)
        return 0
    except (ConfigError, DomainViolation, NoGap, MassMismatch) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
