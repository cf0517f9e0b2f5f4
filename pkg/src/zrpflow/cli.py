"""Config-driven experiment runner.

`zrpflow run <command> --config cfg.json [--out DIR] [--seed S]
[--threads T]` loads a JSON experiment description, validates it against
the library's preconditions, executes one named experiment and writes
machine-readable artifacts into a directory named by the configuration
hash, so identical configurations land in identical files byte for byte.

Commands
--------
exact        potentials and capacities with the three-expression check
principles   optimizer verification and the two-sided variational bounds
collapse     collapsed-chain identity suite
asymptotics  partition-sum / valley-measure / capacity sweeps
approx       ramp + tube + correction-flow construction and verification
rates        exact trace-chain rates and identities
simulate     Monte Carlo mean jump rates and the projected law

The configuration carries: "walk" (states + dense rate matrix, optional
"s_star"), "alpha", "eps", "n_particles" (scalar or list), "a_sites" /
"b_sites" (site labels), "seed", optional "set_mode" ("valley" or
"apex") and per-command "options".
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .capacity import dt_optimizers, sector_check, solve_potentials
from .collapse import collapse_chain, norm_contraction_report
from .configs import ConfigSpace
from .errors import ConfigInvalid, ZrpflowError
from .flows import ConfigGraph, Flow, flow_norm_sq
from .geometry import build_sets, build_valleys, default_scales
from .walk import UnderlyingWalk, build_limit_chain
from .zrp import (
    ZrpModel,
    limit_constants,
    partition_function,
    stationary_vector,
)

COMMANDS = ("exact", "principles", "collapse", "asymptotics", "approx",
            "rates", "simulate")
OUT_ENV = "ZRPFLOW_OUT"


# ---------------------------------------------------------------------------
# Configuration loading / validation
# ---------------------------------------------------------------------------

class Experiment:
    """Validated experiment configuration."""

    def __init__(self, raw: dict):
        self.raw = raw
        walk_cfg = self._need(raw, "walk", dict)
        rates = self._need(walk_cfg, "walk.rates", list, key="rates")
        try:
            self.walk = UnderlyingWalk.from_rates(
                rates, states=walk_cfg.get("states"))
        except (ValueError, ZrpflowError) as exc:
            raise ConfigInvalid(f"walk.rates: {exc}") from exc
        alpha = self._need(raw, "alpha", (int, float))
        if not alpha > 2:
            raise ConfigInvalid(
                f"alpha: got {alpha}, the interaction needs alpha > 2")
        star = walk_cfg.get("s_star")
        try:
            self.model = ZrpModel.build(
                self.walk, float(alpha),
                star_override=[self.walk.site_index(s) for s in star]
                if star else None)
        except ZrpflowError as exc:
            raise ConfigInvalid(f"walk: {exc}") from exc
        self.alpha = float(alpha)
        self.eps = raw.get("eps", 0.05)
        if not 0 < float(self.eps) <= 1 / 16:
            raise ConfigInvalid(f"eps: {self.eps} outside (0, 1/16]")
        n_raw = self._need(raw, "n_particles", (int, list))
        self.n_list = [int(n) for n in
                       (n_raw if isinstance(n_raw, list) else [n_raw])]
        if any(n < 1 for n in self.n_list):
            raise ConfigInvalid("n_particles: entries must be >= 1")
        self.seed = int(raw.get("seed", 0))
        self.set_mode = raw.get("set_mode", "valley")
        if self.set_mode not in ("valley", "apex"):
            raise ConfigInvalid(
                f"set_mode: {self.set_mode!r} not one of valley/apex")
        star_sites = self.model.star_sites
        labels = [self.walk.states[x] for x in star_sites]

        def site_list(name, default):
            vals = raw.get(name, default)
            if not isinstance(vals, list) or not vals:
                raise ConfigInvalid(f"{name}: need a non-empty list")
            bad = [v for v in vals if v not in labels]
            if bad:
                raise ConfigInvalid(
                    f"{name}: {bad} not condensation sites {labels}")
            return tuple(self.walk.site_index(v) for v in vals)

        self.a_sites = site_list("a_sites", [labels[0]])
        self.b_sites = site_list("b_sites", [labels[1]])
        if set(self.a_sites) & set(self.b_sites):
            raise ConfigInvalid("a_sites/b_sites: the site lists overlap")
        self.options = raw.get("options", {})
        if not isinstance(self.options, dict):
            raise ConfigInvalid("options: must be an object")

    @staticmethod
    def _need(obj, path, types, key=None):
        key = key or path
        if key not in obj:
            raise ConfigInvalid(f"{path}: missing")
        val = obj[key]
        if not isinstance(val, types):
            raise ConfigInvalid(f"{path}: wrong type {type(val).__name__}")
        return val

    # -- derived objects -------------------------------------------------

    def config_hash(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True,
                          separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    def space(self, n):
        return ConfigSpace.build(n, self.model.n_sites)

    def scales(self, n):
        return default_scales(self.model, n, self.eps)

    def valleys(self, n, space):
        s = self.scales(n)
        return build_valleys(self.model, space, s.ell, s.b)

    def set_pair(self, n, space):
        """(A, B) index sets per set_mode."""
        if self.set_mode == "apex":
            def apex(x):
                xi = np.zeros(self.model.n_sites, dtype=np.int64)
                xi[x] = n
                return space.index_of(xi)
            return ([apex(x) for x in self.a_sites],
                    [apex(x) for x in self.b_sites])
        v = self.valleys(n, space)
        return (v.union_for(self.a_sites).tolist(),
                v.union_for(self.b_sites).tolist())

    def limit_chain(self):
        consts = limit_constants(self.model)
        return build_limit_chain(self.model.walk, self.model.profile,
                                 self.alpha, consts.gamma_alpha,
                                 consts.i_alpha)

    def star_positions(self, sites):
        star = list(self.model.star_sites)
        return [star.index(s) for s in sites]

    def space_size_ok(self, n, cap=200_000) -> bool:
        return math.comb(n + self.model.n_sites - 1,
                         self.model.n_sites - 1) <= cap


# ---------------------------------------------------------------------------
# Command implementations (each returns {filename: payload})
# ---------------------------------------------------------------------------

def _sweep(exp: Experiment, worker, threads: int):
    if threads <= 1:
        return [worker(n) for n in exp.n_list]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(worker, exp.n_list))


def cmd_exact(exp: Experiment, threads: int) -> dict:
    def one(n):
        space = exp.space(n)
        a_set, b_set = exp.set_pair(n, space)
        sol = solve_potentials(exp.model, space, a_set, b_set)
        return [n, sol.cap, sol.cap_adjoint, sol.cap_symmetrized,
                n ** (1 + exp.alpha) * sol.cap, sol.flux_residual]
    rows = _sweep(exp, one, threads)
    return {"exact.csv": ("csv", ["n_particles", "cap", "cap_adjoint",
                                  "cap_symmetrized", "cap_scaled",
                                  "flux_residual"], rows)}


def cmd_principles(exp: Experiment, threads: int) -> dict:
    from .capacity import generalized_lower_bound, generalized_upper_bound

    trials = int(exp.options.get("trials", 50))
    rng = np.random.default_rng(exp.seed)
    out = {}
    for n in exp.n_list:
        space = exp.space(n)
        a_set, b_set = exp.set_pair(n, space)
        graph = ConfigGraph(exp.model, space)
        sol = solve_potentials(exp.model, space, a_set, b_set)
        rep = dt_optimizers(exp.model, space, a_set, b_set,
                            graph=graph, sol=sol)
        phi_hadj, _, _ = graph.induced_flows(sol.h_adjoint)
        _, phi_adj_h, _ = graph.induced_flows(sol.h)
        f0 = 0.5 * (sol.h + sol.h_adjoint)
        phi0 = 0.5 * (phi_hadj - phi_adj_h)
        g0 = (sol.h_adjoint - sol.h) / (2 * sol.cap)
        psi0 = (1.0 / (2 * sol.cap)) * (phi_hadj + phi_adj_h)
        interior = np.ones(space.size, dtype=bool)
        interior[a_set] = False
        interior[b_set] = False
        violations = 0
        worst_gap = 0.0
        for _ in range(trials):
            scale = float(rng.choice([0.0, 1e-3, 0.1, 1.0]))
            f = f0.copy()
            f[interior] += scale * rng.standard_normal(int(interior.sum()))
            phi = phi0 + Flow(graph, scale * rng.standard_normal(
                graph.n_edges) * graph.cond_sym)
            ub = generalized_upper_bound(exp.model, space, a_set, b_set,
                                         f, phi, sol=sol, graph=graph)
            g = g0.copy()
            g[interior] += scale * rng.standard_normal(int(interior.sum()))
            psi = psi0 + Flow(graph, scale * rng.standard_normal(
                graph.n_edges) * graph.cond_sym)
            lb, _ = generalized_lower_bound(exp.model, space, a_set, b_set,
                                            g, psi, sol=sol, graph=graph)
            if not (lb <= sol.cap * (1 + 1e-9)
                    and ub >= sol.cap * (1 - 1e-9)):
                violations += 1
            worst_gap = max(worst_gap, ub - sol.cap, sol.cap - lb)
        c0 = sector_check(exp.model, space,
                          int(exp.options.get("sector_trials", 200)),
                          seed=exp.seed)
        out[str(n)] = {
            "cap": sol.cap,
            "upper_at_optimum": rep.upper_value,
            "lower_at_optimum": rep.lower_value,
            "optimizer_interior_div": max(rep.phi0_interior_div,
                                          rep.psi0_interior_div),
            "bound_trials": trials,
            "bracket_violations": violations,
            "worst_bound_gap": worst_gap,
            "sector_constant": c0,
        }
    return {"principles.json": ("json", out)}


def cmd_collapse(exp: Experiment, threads: int) -> dict:
    rng = np.random.default_rng(exp.seed)
    out = {}
    for n in exp.n_list:
        space = exp.space(n)
        graph = ConfigGraph(exp.model, space)
        valleys = exp.valleys(n, space)
        x = exp.a_sites[0]
        chain = collapse_chain(exp.model, space, valleys.valley[x], graph)
        other = valleys.complement_of([x])
        cap_orig = solve_potentials(exp.model, space, other,
                                    valleys.valley[x]).cap
        cap_col, cap_col_sym = chain.capacity(
            chain.new_index[other], [chain.point])
        contraction_ok = 0
        trials = int(exp.options.get("trials", 50))
        for _ in range(trials):
            phi = Flow(graph,
                       rng.standard_normal(graph.n_edges) * graph.cond_sym)
            rep = norm_contraction_report(chain, phi)
            if rep["collapsed_norm_sq"] <= rep["norm_sq"] * (1 + 1e-12):
                contraction_ok += 1
        out[str(n)] = {
            "stationarity_residual": chain.stationarity_residual(),
            "cap_against_point": cap_col,
            "cap_original": cap_orig,
            "point_identity_gap": abs(cap_col - cap_orig)
            / max(cap_orig, 1e-300),
            "collapsed_sector_ok": bool(cap_col_sym <= cap_col * (1 + 1e-10)),
            "norm_contraction_pass": contraction_ok,
            "norm_contraction_trials": trials,
        }
    return {"collapse.json": ("json", out)}


def cmd_asymptotics(exp: Experiment, threads: int) -> dict:
    consts = limit_constants(exp.model)
    chain = exp.limit_chain()
    cap_y = chain.capacity(exp.star_positions(exp.a_sites),
                           exp.star_positions(exp.b_sites))

    def one(n):
        space = exp.space(n)
        valleys = exp.valleys(n, space)
        mu = stationary_vector(exp.model, space)
        z_n = partition_function(exp.model, n)
        v0 = valleys.valley[exp.model.star_sites[0]]
        scaled_valley = len(exp.model.star_sites) * float(mu[v0].sum())
        a_set = valleys.union_for(exp.a_sites)
        b_set = valleys.union_for(exp.b_sites)
        cap = solve_potentials(exp.model, space, a_set, b_set).cap
        return [n, z_n, abs(z_n - consts.z_limit) / consts.z_limit,
                scaled_valley, abs(scaled_valley - 1.0),
                cap, n ** (1 + exp.alpha) * cap,
                n ** (1 + exp.alpha) * cap / cap_y]
    rows = _sweep(exp, one, threads)
    return {"asymptotics.csv": (
        "csv", ["n_particles", "z_n", "z_rel_err", "valley_scaled",
                "valley_gap", "cap", "cap_scaled", "cap_over_limit"], rows),
        "asymptotics.json": ("json", {"z_limit": consts.z_limit,
                                      "cap_y": cap_y})}


def cmd_approx(exp: Experiment, threads: int) -> dict:
    from .approx import (approx_verification, build_global_construction,
                         ramp_functions)

    ramp = ramp_functions(float(exp.eps), exp.alpha)
    chain = exp.limit_chain()
    out = {"ramp_properties": ramp.property_report(2001)}
    for n in exp.n_list:
        space = exp.space(n)
        graph = ConfigGraph(exp.model, space)
        sets = build_sets(exp.model, space, exp.scales(n))
        gc = build_global_construction(
            exp.model, space, graph, sets, chain,
            list(exp.a_sites), list(exp.b_sites), ramp)
        out[str(n)] = approx_verification(exp.model, space, graph, sets, gc)
    return {"approx.json": ("json", out)}


def cmd_rates(exp: Experiment, threads: int) -> dict:
    from .dynamics import trace_chain_exact

    chain = exp.limit_chain()

    def one(n):
        space = exp.space(n)
        valleys = exp.valleys(n, space)
        tc = trace_chain_exact(exp.model, space, valleys)
        x, y = exp.a_sites[0], exp.b_sites[0]
        target = chain.rate_matrix[exp.star_positions([x])[0],
                                   exp.star_positions([y])[0]]
        scaled = n ** (1 + exp.alpha) * tc.mean_rates[(x, y)]
        return [n, tc.mean_rates[(x, y)], scaled, scaled / target,
                tc.holding_identity_residual, tc.hitting_identity_residual]
    rows = _sweep(exp, one, threads)
    return {"rates.csv": ("csv", [
        "n_particles", "mean_rate", "mean_rate_scaled", "rate_over_limit",
        "holding_identity_residual", "hitting_identity_residual"], rows)}


def cmd_simulate(exp: Experiment, threads: int) -> dict:
    from .dynamics import mc_paths, trace_chain_exact

    out = {}
    n_paths = int(exp.options.get("n_paths", 200))
    t_rescaled = float(exp.options.get("t_rescaled", 0.02))
    chain = exp.limit_chain()
    for n in exp.n_list:
        scales = exp.scales(n)
        horizon = t_rescaled * n ** (1 + exp.alpha)
        stats = mc_paths(exp.model, n, scales.ell, scales.b,
                         exp.a_sites[0], horizon, n_paths, exp.seed)
        est = stats.rate_estimates()
        x, y = exp.a_sites[0], exp.b_sites[0]
        entry = {
            "n_paths": n_paths,
            "horizon": horizon,
            "engine": stats.engine,
            "transitions": stats.n_transitions,
            "events": int(stats.events.sum()),
            "projection": {str(k): v for k, v in
                           stats.projection_distribution().items()},
        }
        if (x, y) in est:
            rate, se = est[(x, y)]
            entry["rate"] = rate
            entry["rate_se"] = se
            entry["rate_scaled"] = rate * n ** (1 + exp.alpha)
        small = bool(exp.options.get("compare_exact", True)) \
            and exp.space_size_ok(n)
        if small:
            space = exp.space(n)
            valleys = exp.valleys(n, space)
            tc = trace_chain_exact(exp.model, space, valleys)
            entry["rate_exact"] = tc.mean_rates[(x, y)]
        out[str(n)] = entry
    return {"simulate.json": ("json", out)}


RUNNERS = {
    "exact": cmd_exact,
    "principles": cmd_principles,
    "collapse": cmd_collapse,
    "asymptotics": cmd_asymptotics,
    "approx": cmd_approx,
    "rates": cmd_rates,
    "simulate": cmd_simulate,
}


# ---------------------------------------------------------------------------
# Artifact writing
# ---------------------------------------------------------------------------

def _write_artifacts(out_dir: Path, command: str, exp: Experiment,
                     artifacts: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, payload in artifacts.items():
        path = out_dir / name
        if payload[0] == "csv":
            _, header, rows = payload
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(header)
                for row in rows:
                    w.writerow([_fmt(v) for v in row])
        else:
            with open(path, "w") as fh:
                json.dump(payload[1], fh, indent=1, sort_keys=True,
                          default=_json_default)
                fh.write("\n")
    manifest = {
        "command": command,
        "config_hash": exp.config_hash(),
        "seed": exp.seed,
        "version": __version__,
        "config": exp.raw,
    }
    with open(out_dir / "run.json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def _json_default(obj):
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON-serialisable: {type(obj)}")


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="zrpflow",
        description="experiment runner for zero-range condensation studies")
    sub = p.add_subparsers(dest="verb", required=True)
    run = sub.add_parser("run", help="run one named experiment")
    run.add_argument("command", choices=COMMANDS)
    run.add_argument("--config", required=True, help="JSON experiment file")
    run.add_argument("--out", default=None,
                     help=f"output root (default ${OUT_ENV} or ./runs)")
    run.add_argument("--seed", type=int, default=None,
                     help="override the config seed")
    run.add_argument("--threads", type=int, default=1,
                     help="worker threads for sweep points")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with open(args.config) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        raw["seed"] = args.seed
    try:
        exp = Experiment(raw)
    except ConfigInvalid as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return 2
    out_root = Path(args.out or os.environ.get(OUT_ENV, "runs"))
    out_dir = out_root / f"{args.command}-{exp.config_hash()}"
    try:
        artifacts = RUNNERS[args.command](exp, max(1, args.threads))
    except ZrpflowError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    _write_artifacts(out_dir, args.command, exp, artifacts)
    print(out_dir)
    return 0


if __name__ == "__main__":
    sys.exit(main())
