"""Command-line harness: ``nfisac run | sweep | validate | export-channels``.

Exit codes: 0 success, 2 infeasible, 3 solver failure, 4 config error.

Every run writes into its own output directory:

``convergence.jsonl``   one JSON record per solved stage, flushed as it happens
``feasibility.json``    flat constraint report on the true (near-field) channels
``beamformers.txt``     N_t x K matrix, one column per user stream
``sensing_cov.txt`` / ``total_cov.txt``   R_s and R_x
``ris_phases.csv``      element index and phase in radians
``sinr_<user>.csv``     SINR map of each user stream (header y,z,value)
``capon_raw.csv`` / ``capon_compensated.csv``   normalized Capon spectra
``summary.json``        mu, rates, gains, cross-correlations, constraint counts, runtimes

Matrix files are plain text: a ``# rows cols`` header, then one matrix row
per line with entries written as ``re,im`` and separated by single spaces.
Apart from the ``runtime_s`` block of the summary, all outputs are
deterministic for a fixed seed.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .channels import build_channel_set
from .conic import SolverError
from .config import PRESETS, ConfigError, ScenarioConfig, load_config, preset_config
from .metrics import TransmitDesign, target_pairs
from .optimizer import DegenerateUserError, InfeasibleError, RoundingDegenerateError
from .simulate import METHODS, far_field_channels, run_benchmark, write_grid_csv

EXIT_OK, EXIT_INFEASIBLE, EXIT_SOLVER, EXIT_CONFIG = 0, 2, 3, 4

log = logging.getLogger("nfisac")


# -- plain-text complex matrices ---------------------------------------------

def write_complex_matrix(path, m):
    m = np.atleast_2d(np.asarray(m, dtype=complex))
    lines = [f"# {m.shape[0]} {m.shape[1]}"]
    for row in m:
        lines.append(" ".join(f"{v.real:.17e},{v.imag:.17e}" for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_complex_matrix(path) -> np.ndarray:
    lines = Path(path).read_text().splitlines()
    rows, cols = (int(v) for v in lines[0].lstrip("#").split())
    out = np.zeros((rows, cols), dtype=complex)
    for i, line in enumerate(lines[1:1 + rows]):
        for j, entry in enumerate(line.split()):
            re, im = entry.split(",")
            out[i, j] = complex(float(re), float(im))
    return out


def write_phases(path, phases):
    lines = ["index,theta_rad"] + [f"{i},{t:.17e}" for i, t in enumerate(np.asarray(phases, dtype=float))]
    Path(path).write_text("\n".join(lines) + "\n")


def read_phases(path) -> np.ndarray:
    lines = Path(path).read_text().splitlines()[1:]
    return np.array([float(line.split(",")[1]) for line in lines])


def _dump_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _cfloat(z) -> dict:
    z = complex(z)
    return {"re": z.real, "im": z.imag, "abs": abs(z)}


# -- run ---------------------------------------------------------------------

def _resolve_config(args) -> ScenarioConfig:
    if getattr(args, "config", None):
        return load_config(args.config)
    return preset_config(args.preset)


def summarize(result, scenario) -> dict:
    """Summary document; every number is recomputable from the exported matrices."""
    ao, rep = result.ao, result.ao.feasibility
    pairs = [] if result.config.constraints.drop_pairs else target_pairs(
        [t.name for t in scenario.targets], result.config.constraints.skip_pairs)
    summary = {
        "scenario": scenario.name,
        "method": result.method,
        "seed": result.echo_seed,
        "mu": rep.mu,
        "mu_trace": [float(v) for v in ao.mu_trace],
        "ris_relaxed_mu": [float(v) for v in ao.ris_relaxed_trace],
        "rounding_loss": [float(v) for v in ao.rounding_loss],
        "monotone": ao.monotone(),
        "converged": ao.converged,
        "terminated": ao.terminated,
        "feasible": rep.feasible,
        "feasible_on_optimization_model": (ao.model_feasibility or rep).feasible,
        "violations": {k: float(v) for k, v in rep.violations().items()},
        "power_w": rep.power,
        "p_max_w": rep.p_max,
        "rates": {k: float(v) for k, v in rep.rates.items()},
        "min_rates": {k: float(v) for k, v in rep.min_rates.items()},
        "sinr": {k: float(v) for k, v in rep.sinrs.items()},
        "gains": {k: float(v) for k, v in rep.gains.items()},
        "cross_correlation": {f"{a}|{b}": _cfloat(v) for (a, b), v in _signed_cross(result, scenario).items()},
        "cross_ratio": {str(k): float(v) for k, v in rep.cross_ratios.items()},
        "pair_constraint_count": len(pairs),
        "constrained_pairs": [f"{a}|{b}" for a, b in pairs],
        "constraint_count": {k: int(v) for k, v in ao.constraint_count.items()},
        "runtime_s": {k: float(v) for k, v in result.runtime.items()},
    }
    if result.capon is not None:
        summary["capon_peaks"] = [{"y": y, "z": z, "value": v} for y, z, v in result.capon.peaks(max_peaks=10)]
    return summary


def _signed_cross(result, scenario) -> dict:
    """Complex cross-correlation of every target pair, constrained or not."""
    from .channels import effective_tx_channel
    from .metrics import cross_correlation

    near = result.eval_channels
    h = {t.name: effective_tx_channel(t.name, result.ao.final_ris, near) for t in scenario.targets}
    names = [t.name for t in scenario.targets]
    return {(a, b): cross_correlation(result.ao.final_design.total_cov, h[a], h[b])
            for a, b in target_pairs(names)}


def write_outputs(out: Path, result, scenario):
    ao = result.ao
    design: TransmitDesign = ao.final_design
    n_t = design.num_tx
    f = np.array(design.beamformers).T if design.beamformers else np.zeros((n_t, 0))
    write_complex_matrix(out / "beamformers.txt", f)
    write_complex_matrix(out / "sensing_cov.txt", design.sensing_cov)
    write_complex_matrix(out / "total_cov.txt", design.total_cov)
    write_phases(out / "ris_phases.csv", ao.final_ris.phases)
    _dump_json(out / "feasibility.json", {k: (float(v) if not isinstance(v, bool) else v)
                                          for k, v in ao.feasibility.to_dict().items()})
    for name, values in result.sinr_maps.items():
        write_grid_csv(out / f"sinr_{name}.csv", result.grid, values)
    if result.capon is not None:
        write_grid_csv(out / "capon_raw.csv", result.grid, result.capon.raw)
        write_grid_csv(out / "capon_compensated.csv", result.grid, result.capon.compensated)
    _dump_json(out / "summary.json", summarize(result, scenario))


def run_experiment(cfg: ScenarioConfig, method: str, out, seed: int | None = None,
                   with_capon: bool = True, with_sinr: bool = True) -> int:
    """Run one experiment into ``out``; returns the process exit code."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    seed = cfg.seed if seed is None else seed
    if seed != cfg.seed:
        cfg = ScenarioConfig({**cfg.data, "seed": seed})
    scenario = cfg.to_scenario()
    log_path = out / "convergence.jsonl"
    with log_path.open("w") as fh:
        def on_record(rec):
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
            fh.flush()

        try:
            result = run_benchmark(scenario, method, cfg.ao_config(), cfg.grid(), seed=seed,
                                   with_capon=with_capon, with_sinr=with_sinr, on_record=on_record)
        except InfeasibleError as exc:
            _dump_json(out / "error.json", {"kind": "infeasible", "stage": exc.stage,
                                            "implicated": exc.implicated, "message": str(exc)})
            log.error("infeasible: %s", exc)
            return EXIT_INFEASIBLE
        except (SolverError, DegenerateUserError, RoundingDegenerateError) as exc:
            _dump_json(out / "error.json", {"kind": "solver", "message": str(exc)})
            log.error("solver failure: %s", exc)
            return EXIT_SOLVER
    write_outputs(out, result, scenario)
    # a benchmark optimized on a mismatched model is judged on that model;
    # its violations on the true channels are results, not failures
    rep = result.ao.model_feasibility or result.ao.feasibility
    if not rep.feasible:
        log.error("final design violates %s", ", ".join(rep.violations()))
        return EXIT_INFEASIBLE
    return EXIT_OK


# -- export-channels ---------------------------------------------------------

def export_channels(cfg: ScenarioConfig, out, far_field: bool = False):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    scenario = cfg.to_scenario()
    ch = far_field_channels(scenario) if far_field else build_channel_set(scenario, warn_far_field=False)
    index = {"model": "far_field" if far_field else "near_field", "alpha": dict(ch.alpha),
             "rayleigh_distance_m": scenario.rayleigh_distance(), "files": {}}

    def dump(key, m):
        fname = f"{key}.txt"
        write_complex_matrix(out / fname, np.atleast_2d(m) if np.ndim(m) == 2 else np.asarray(m)[:, None])
        index["files"][key] = fname

    dump("bs_ris", ch.bs_ris)
    dump("ris_bs_rx", ch.ris_bs_rx)
    for prefix, table in (("los_tx", ch.los_tx), ("los_rx", ch.los_rx), ("ris_link", ch.ris_link)):
        for name, v in table.items():
            dump(f"{prefix}_{name}", v)
    _dump_json(out / "channels.json", index)


# -- argument parsing --------------------------------------------------------

def _add_source(p, required=True):
    g = p.add_mutually_exclusive_group(required=required)
    g.add_argument("--preset", choices=PRESETS, help="bundled scenario")
    g.add_argument("--config", type=Path, help="scenario YAML file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nfisac", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="optimize one scenario and export the design and maps")
    _add_source(p)
    p.add_argument("--method", choices=METHODS, help="defaults to the method in the scenario file")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--no-capon", action="store_true")
    p.add_argument("--no-sinr", action="store_true")

    p = sub.add_parser("sweep", help="run several methods and seeds into separate directories")
    _add_source(p)
    p.add_argument("--methods", nargs="+", choices=METHODS, default=list(METHODS))
    p.add_argument("--seeds", nargs="+", type=int, default=[0])
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--no-capon", action="store_true")
    p.add_argument("--no-sinr", action="store_true")

    p = sub.add_parser("validate", help="schema check only")
    p.add_argument("path", type=Path, nargs="?")
    p.add_argument("--preset", choices=PRESETS)

    p = sub.add_parser("export-channels", help="dump the channel set for inspection")
    _add_source(p)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--far-field", action="store_true", help="planar-wave channels instead")
    return parser


def _sweep_job(job) -> int:
    data, method, seed, out, capon, sinr = job
    return run_experiment(ScenarioConfig(data), method, out, seed, capon, sinr)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "validate":
            if (args.path is None) == (args.preset is None):
                raise ConfigError("give exactly one of PATH or --preset")
            cfg = load_config(args.path) if args.path else preset_config(args.preset)
            cfg.to_scenario()
            print(f"ok: {cfg.name}")
            return EXIT_OK
        cfg = _resolve_config(args)
        cfg.to_scenario()
    except (ConfigError, ValueError, KeyError) as exc:
        # ValueError/KeyError: geometry or scenario invariants broken by the file
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "export-channels":
        export_channels(cfg, args.out, args.far_field)
        return EXIT_OK
    if args.command == "run":
        return run_experiment(cfg, args.method or cfg.method, args.out, args.seed,
                              not args.no_capon, not args.no_sinr)
    jobs = [(cfg.data, m, s, args.out / f"{m}_seed{s}", not args.no_capon, not args.no_sinr)
            for m in args.methods for s in args.seeds]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            codes = list(pool.map(_sweep_job, jobs))
    else:
        codes = [_sweep_job(j) for j in jobs]
    _dump_json(args.out / "sweep.json", {f"{j[1]}_seed{j[2]}": c for j, c in zip(jobs, codes)})
    return max(codes, default=EXIT_OK)


if __name__ == "__main__":
    sys.exit(main())
