"""Batch command-line frontend.

Subcommands: simulate, collapse, fit, indices, evolve, synth, modes.  Every
command validates its configuration, writes a ``manifest.json`` echoing the
fully resolved configuration (including the seed), and emits plot-ready CSV
data files — never rendered graphics.  Outputs are deterministic: re-running
a command with the configuration recorded in its manifest reproduces every
file byte for byte.

Exit codes: 0 success, 2 usage error, 3 data validation error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__, distlib, estimate, fpsolve, poverty, simulate, survey
from .errors import DataError, DomainError, NumericalError


def _fmt(x) -> str:
    return f"{x:.12g}"


def _write_manifest(out_dir: Path, command: str, config: dict) -> None:
    payload = {"command": command, "config": config, "version": __version__}
    text = json.dumps(payload, sort_keys=True, indent=2) + "\n"
    (out_dir / "manifest.json").write_text(text, encoding="utf-8")


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n",
                    encoding="utf-8")


def _write_csv(path: Path, header: list, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(cell if isinstance(cell, str) else _fmt(cell)
                              for cell in row) + "\n")


def _say(args, message: str) -> None:
    if not args.quiet:
        print(message)


def _parse_times(text: str) -> list:
    if not text:
        return []
    return [float(tok) for tok in text.split(",") if tok.strip()]


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    out = _out_dir(args)
    params = simulate.LangevinParams(M=args.M, labour_rate=args.C, dt=args.dt,
                                     noise_scale=args.sigma)
    dist = distlib.SteadyStateIPDF(args.M, args.C)
    init = dist if args.init == "equilibrium" else args.C / args.M
    snap_times = _parse_times(args.snapshot_times)
    # the worker count is deliberately not part of the manifest: results are
    # identical for any parallelism degree
    config = {"M": args.M, "C": args.C, "sigma": args.sigma, "dt": args.dt,
              "agents": args.agents, "t_end": args.t_end, "init": args.init,
              "snapshot_times": snap_times, "seed": args.seed,
              "hill_tail_fraction": args.hill_tail_fraction,
              "histogram_bins": args.histogram_bins}
    _write_manifest(out, "simulate", config)
    snaps = simulate.run(args.agents, params, args.t_end, init, args.seed,
                         snapshot_times=snap_times, workers=args.workers)

    hist_rows = []
    ks_rows = []
    for pop in snaps:
        y = pop.incomes
        edges = np.geomspace(y.min(), y.max() * (1 + 1e-12), args.histogram_bins + 1)
        counts, _ = np.histogram(y, bins=edges)
        dens = counts / (counts.sum() * np.diff(edges))
        for lo, hi, cnt, dd in zip(edges[:-1], edges[1:], counts, dens):
            hist_rows.append((pop.time, lo, hi, float(cnt), dd))
        ks_rows.append((pop.time, simulate.ks_distance(y, lambda v: distlib.ipdf_cdf(dist, v))))
    _write_csv(out / "histograms.csv",
               ["t", "bin_lower", "bin_upper", "count", "density"], hist_rows)
    final = snaps[-1]
    hill = simulate.hill_tail_exponent(final.incomes, args.hill_tail_fraction)
    report = {
        "ks_by_time": [{"t": t, "ks": ks} for t, ks in ks_rows],
        "final_ks": ks_rows[-1][1],
        "hill_density_exponent": hill,
        "hill_tail_fraction": args.hill_tail_fraction,
        "asymptotic_density_exponent": args.M + 2.0,
        "sample_mean": float(final.incomes.mean()),
        "model_mean": args.C / args.M,
    }
    _write_json(out / "report.json", report)
    _say(args, f"simulate: KS={report['final_ks']:.4g} hill={hill:.3f} -> {out}")
    return 0


def cmd_collapse(args) -> int:
    out = _out_dir(args)
    rounds = survey.load_rounds(args.rounds)
    table = survey.load_deflators(args.deflators, args.reference_year,
                                  args.reference_mean)
    target = args.target_mean if args.target_mean is not None \
        else table.reference_mean_income
    offset_abs = args.offset_frac * target
    c0 = args.M * (target - offset_abs)
    config = {"rounds": str(args.rounds), "deflators": str(args.deflators),
              "reference_year": args.reference_year,
              "reference_mean": args.reference_mean, "target_mean": target,
              "M": args.M, "offset_frac": args.offset_frac,
              "grid_points": args.grid_points, "seed": args.seed}
    _write_manifest(out, "collapse", config)

    collapsed = [survey.collapse_rescale(survey.deflate(r, table), target)
                 for r in rounds]
    knot_lo = min(min(b.lower for b in r.bands if b.lower > 0.0) for r in collapsed)
    knot_hi = max(max(b.upper for b in r.bands if not b.is_open) for r in collapsed)
    grid = np.geomspace(0.25 * knot_lo, 4.0 * knot_hi, args.grid_points)
    rows = []
    curves = []
    for rnd in collapsed:
        cdf = survey.empirical_cdf(rnd)(grid)
        curves.append(cdf)
        rows.extend((rnd.round_id, y, c) for y, c in zip(grid, cdf))
    _write_csv(out / "collapsed_cdf.csv", ["round_id", "y", "cdf"], rows)
    dist = distlib.SteadyStateIPDF(args.M, c0, offset_abs)
    model_cdf = np.where(grid > offset_abs,
                         [distlib.ipdf_cdf(dist, max(y - offset_abs, 1e-300))
                          if y > offset_abs else 0.0 for y in grid], 0.0)
    _write_csv(out / "model_cdf.csv", ["y", "cdf"],
               list(zip(grid, model_cdf)))
    spread = float(np.max(np.max(curves, axis=0) - np.min(curves, axis=0))) \
        if len(curves) > 1 else 0.0
    # irregular band grids put a binning floor under any collapse comparison
    binning_tol = 0.5 * max(float(r.shares.max()) for r in collapsed)
    _write_json(out / "report.json", {
        "n_rounds": len(collapsed), "target_mean": target,
        "model": {"M": args.M, "C0": c0, "offset": offset_abs},
        "max_cdf_spread": spread,
        "binning_tolerance": binning_tol})
    _say(args, f"collapse: {len(collapsed)} rounds, max spread {spread:.4g} -> {out}")
    return 0


def _prepare_rounds(args):
    rounds = survey.load_rounds(args.rounds)
    if args.deflators:
        table = survey.load_deflators(args.deflators, args.reference_year,
                                      args.reference_mean)
        rounds = [survey.deflate(r, table) for r in rounds]
    if getattr(args, "collapse_to", None):
        rounds = [survey.collapse_rescale(r, args.collapse_to) for r in rounds]
    return rounds


def cmd_fit(args) -> int:
    out = _out_dir(args)
    config = {"rounds": str(args.rounds), "deflators": args.deflators and str(args.deflators),
              "reference_year": args.reference_year, "reference_mean": args.reference_mean,
              "collapse_to": args.collapse_to, "fix_offset": args.fix_offset,
              "fit_offset": args.fit_offset, "seed": args.seed}
    _write_manifest(out, "fit", config)
    rounds = _prepare_rounds(args)
    fix = None if args.fit_offset else args.fix_offset
    reports = []
    rows = []
    for rnd in rounds:
        fit = estimate.fit_ipdf(rnd, fix_offset=fix)
        reports.append({"round_id": rnd.round_id, "year": rnd.year,
                        "M": fit.M, "C0": fit.C0, "offset": fit.offset,
                        "log_likelihood": fit.log_likelihood,
                        "converged": fit.converged,
                        "n_evaluations": fit.n_evaluations})
        for b, obs, exp in zip(rnd.bands, rnd.shares, fit.per_band_expected_shares):
            rows.append((rnd.round_id, b.lower, b.upper, obs, exp))
    _write_json(out / "fit_report.json", {"fits": reports})
    _write_csv(out / "expected_vs_observed.csv",
               ["round_id", "band_lower", "band_upper", "observed_share",
                "expected_share"], rows)
    _say(args, f"fit: {len(rounds)} rounds -> {out}")
    return 0


def cmd_indices(args) -> int:
    out = _out_dir(args)
    config = {"rounds": str(args.rounds), "deflators": args.deflators and str(args.deflators),
              "reference_year": args.reference_year, "reference_mean": args.reference_mean,
              "collapse_to": args.collapse_to, "line": args.line,
              "fix_offset": args.fix_offset, "pooled_M": args.pooled_M,
              "seed": args.seed}
    _write_manifest(out, "indices", config)
    rounds = _prepare_rounds(args)
    fits = [estimate.fit_ipdf(r, fix_offset=args.fix_offset) for r in rounds]
    monods = [estimate.fit_monod(r) for r in rounds]
    series = poverty.index_series(rounds, fits, monods, args.line,
                                  pooled_M=args.pooled_M)
    series.write_csv(out / "indices.csv")
    _write_json(out / "diagnostics.json", series.diagnostics)
    _say(args, f"indices: {len(series.rows)} rounds -> {out}")
    return 0


def cmd_evolve(args) -> int:
    out = _out_dir(args)
    span = tuple(float(t) for t in args.span.split(","))
    if len(span) != 2:
        raise DataError("--span must be lo,hi")
    snap_times = _parse_times(args.snapshot_times)
    bump_center = args.bump_center if args.bump_center is not None \
        else 3.0 * args.C0 / args.M
    config = {"M": args.M, "C0": args.C0, "t_end": args.t_end, "dt": args.dt,
              "cells": args.cells, "span": list(span), "init": args.init,
              "bump_center": bump_center, "bump_width": args.bump_width,
              "snapshot_times": snap_times, "seed": args.seed}
    _write_manifest(out, "evolve", config)
    grid = fpsolve.log_grid(args.M, args.C0, args.cells, span)
    dist = distlib.SteadyStateIPDF(args.M, args.C0)
    steady = fpsolve.density_on_grid(dist, grid)
    if args.init == "steady":
        f0 = steady
    else:
        f0 = fpsolve.bump_density(grid, bump_center, args.bump_width)
    times = snap_times or list(np.linspace(args.t_end / 8.0, args.t_end, 8))
    final, snaps = fpsolve.evolve(f0, args.M, args.C0, args.t_end, dt=args.dt,
                                  snapshot_times=times)
    all_snaps = [f0] + snaps + ([final] if not snaps or snaps[-1].time != final.time else [])
    fpsolve.write_snapshots_csv(out / "snapshots.csv", all_snaps)
    conv_rows = [(s.time, fpsolve.l1_distance(s, steady)) for s in all_snaps]
    _write_csv(out / "convergence.csv", ["t", "l1_to_steady"], conv_rows)
    drift = abs(final.mass() - f0.mass()) / max(final.time - f0.time, 1e-12)
    _write_json(out / "report.json", {
        "final_l1_to_steady": conv_rows[-1][1],
        "mass_drift_per_unit_time": drift,
        "residual_on_grid": fpsolve.steady_state_residual(args.M, args.C0, grid)})
    _say(args, f"evolve: final L1 {conv_rows[-1][1]:.4g} -> {out}")
    return 0


def cmd_synth(args) -> int:
    out = _out_dir(args)
    dist = distlib.SteadyStateIPDF(args.M, args.C0, args.offset)
    if args.edges:
        edges = np.asarray([float(t) for t in args.edges.split(",")])
    else:
        # quantile edges of the observed-income law, plus an open band
        qs = np.linspace(0.0, 1.0, args.auto_bands + 1)[1:-1]
        pts = [args.offset + _quantile(dist, q) for q in qs]
        edges = np.asarray([0.0] + pts + [math.inf])
    config = {"M": args.M, "C0": args.C0, "offset": args.offset,
              "edges": [(_fmt(e) if math.isfinite(e) else "inf") for e in edges],
              "n": args.n, "V": args.V, "K": args.K, "round_id": args.round_id,
              "year": args.year, "seed": args.seed}
    _write_manifest(out, "synth", config)
    rnd = survey.synth_round(dist, edges, args.n, args.seed, (args.V, args.K),
                             round_id=args.round_id, year=args.year)
    survey.save_rounds(out / "rounds.csv", [rnd])
    _say(args, f"synth: {len(rnd.bands)} bands, n={args.n} -> {out}")
    return 0


def _quantile(dist: distlib.SteadyStateIPDF, q: float) -> float:
    lo, hi = 1e-9 * dist.scale_C0, 1e9 * dist.scale_C0
    for _ in range(200):
        mid = math.sqrt(lo * hi)
        if distlib.ipdf_cdf(dist, mid) < q:
            lo = mid
        else:
            hi = mid
    return math.sqrt(lo * hi)


def cmd_modes(args) -> int:
    out = _out_dir(args)
    config = {"M": args.M, "C0": args.C0, "n_max": args.n_max, "A1": args.A1,
              "A2": args.A2, "grid_points": args.grid_points, "seed": args.seed}
    _write_manifest(out, "modes", config)
    # grid kept where the transformed Kummer argument stays representable
    grid = np.geomspace(args.C0 / 600.0, 60.0 * args.C0, args.grid_points)
    dist = distlib.SteadyStateIPDF(args.M, args.C0)
    params_report = []
    curve_rows = []
    residuals = []
    for n in range(args.n_max + 1):
        mode = fpsolve.eigenmode_params(n, args.M, A1=args.A1, A2=args.A2,
                                        c=args.C0)
        params_report.append({
            "n": n, "omega_n": mode.omega_n,
            "alpha_plus": mode.alpha_plus, "alpha_minus": mode.alpha_minus,
            "beta_plus": mode.beta_plus, "beta_minus": mode.beta_minus,
            "beta_minus_pole": mode.beta_minus_pole})
        usable = mode if not (mode.beta_minus_pole and mode.A1 != 0.0) else \
            fpsolve.eigenmode_params(n, args.M, A1=0.0, A2=args.A2, c=args.C0)
        g = fpsolve.eigenmode_eval(usable, grid)
        curve_rows.extend((float(n), y, gv) for y, gv in zip(grid, g))
        residuals.append({"n": n, "relative_operator_residual":
                          fpsolve.eigenmode_operator_residual(usable, args.M, grid)})
    _write_json(out / "mode_params.json", {"modes": params_report})
    _write_csv(out / "modes.csv", ["n", "y", "g"], curve_rows)
    steady = fpsolve.steady_state_mode(args.M, args.C0)
    g0 = fpsolve.eigenmode_eval(steady, grid)
    ref = distlib.ipdf_density(dist, grid)
    rel_err = float(np.max(np.abs(g0 - ref) / ref))
    _write_json(out / "report.json", {
        "steady_state_max_rel_err": rel_err,
        "operator_residuals": residuals})
    _say(args, f"modes: n<=~{args.n_max}, steady-state recovery err {rel_err:.3g} -> {out}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _positive_int(text: str) -> int:
    value = int(text)
    if value <= 0:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="incomedyn",
        description="Income-distribution dynamics: simulation, steady-state "
                    "fits, and poverty indices from banded survey data.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out-dir", default="out")
        p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("simulate", help="agent-based run vs the analytic law")
    common(p)
    p.add_argument("--M", type=float, default=1.6)
    p.add_argument("--C", type=float, default=1.6)
    p.add_argument("--sigma", type=float, default=simulate.DEFAULT_SIGMA)
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--agents", type=_positive_int, required=True)
    p.add_argument("--t-end", type=float, default=50.0)
    p.add_argument("--init", choices=["mean", "equilibrium"], default="mean")
    p.add_argument("--snapshot-times", default="")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--hill-tail-fraction", type=float, default=0.05)
    p.add_argument("--histogram-bins", type=int, default=80)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("collapse", help="deflate, rescale, and overlay rounds")
    common(p)
    p.add_argument("--rounds", required=True)
    p.add_argument("--deflators", required=True)
    p.add_argument("--reference-year", type=float, default=1974.0)
    p.add_argument("--reference-mean", type=float, default=64.84)
    p.add_argument("--target-mean", type=float, default=None)
    p.add_argument("--M", type=float, default=1.6)
    p.add_argument("--offset-frac", type=float, default=0.15)
    p.add_argument("--grid-points", type=int, default=200)
    p.set_defaults(func=cmd_collapse)

    p = sub.add_parser("fit", help="binned MLE of the income law per round")
    common(p)
    p.add_argument("--rounds", required=True)
    p.add_argument("--deflators", default=None)
    p.add_argument("--reference-year", type=float, default=1974.0)
    p.add_argument("--reference-mean", type=float, default=64.84)
    p.add_argument("--collapse-to", type=float, default=None)
    p.add_argument("--fix-offset", type=float, default=estimate.DEFAULT_OFFSET)
    p.add_argument("--fit-offset", action="store_true",
                   help="fit the starvation offset instead of fixing it")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("indices", help="poverty index series per round")
    common(p)
    p.add_argument("--rounds", required=True)
    p.add_argument("--deflators", default=None)
    p.add_argument("--reference-year", type=float, default=1974.0)
    p.add_argument("--reference-mean", type=float, default=64.84)
    p.add_argument("--collapse-to", type=float, default=None)
    p.add_argument("--line", type=float, default=356.0,
                   help="poverty line in the rounds' monetary frame")
    p.add_argument("--fix-offset", type=float, default=estimate.DEFAULT_OFFSET)
    p.add_argument("--pooled-M", type=float, default=None)
    p.set_defaults(func=cmd_indices)

    p = sub.add_parser("evolve", help="finite-volume density evolution")
    common(p)
    p.add_argument("--M", type=float, default=1.6)
    p.add_argument("--C0", type=float, default=1.6)
    p.add_argument("--t-end", type=float, default=20.0)
    p.add_argument("--dt", type=float, default=None)
    p.add_argument("--cells", type=int, default=2000)
    p.add_argument("--span", default="1e-3,1e3")
    p.add_argument("--init", choices=["steady", "bump"], default="bump")
    p.add_argument("--bump-center", type=float, default=None)
    p.add_argument("--bump-width", type=float, default=0.1)
    p.add_argument("--snapshot-times", default="")
    p.set_defaults(func=cmd_evolve)

    p = sub.add_parser("synth", help="generate a synthetic survey round")
    common(p)
    p.add_argument("--M", type=float, default=1.6)
    p.add_argument("--C0", type=float, default=1.6)
    p.add_argument("--offset", type=float, default=0.15)
    p.add_argument("--edges", default="",
                   help="comma-separated band edges (last may be inf)")
    p.add_argument("--auto-bands", type=int, default=20)
    p.add_argument("--n", type=_positive_int, required=True)
    p.add_argument("--V", type=float, default=1.0)
    p.add_argument("--K", type=float, default=0.5)
    p.add_argument("--round-id", default="synth")
    p.add_argument("--year", type=float, default=2000.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("modes", help="evaluate the transient eigenmodes")
    common(p)
    p.add_argument("--M", type=float, default=1.6)
    p.add_argument("--C0", type=float, default=1.6)
    p.add_argument("--n-max", type=int, default=2)
    p.add_argument("--A1", type=float, default=0.0)
    p.add_argument("--A2", type=float, default=1.0)
    p.add_argument("--grid-points", type=int, default=1500)
    p.set_defaults(func=cmd_modes)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DataError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
