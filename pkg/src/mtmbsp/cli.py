"""Command-line entry point: ``mtmbsp fit | simulate | summarize``.

Exit codes: 0 success, 2 invalid input or configuration, 3 numerical
failure, 4 I/O failure (including corrupt files).
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .errors import ContractError, InputError, NumericalError, ParameterError, ValidationError
from .gibbs import PosteriorSamples, run_chain
from .io import (RunConfig, file_sha256, load_dataset, manifest_hash, read_draws, versions,
                 write_draws, write_json, write_summary)
from .rng import RandomStream
from .selection import selection_sets, two_step_fit
from .simulate import METRIC_NAMES, paper_grid, run_replicates

log = logging.getLogger("mtmbsp")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4
# manifest keys left out of the reproducibility hash
_UNHASHED = ("timings", "paths", "output_dir")


def _manifest(cfg: RunConfig, command: str, **extra) -> dict:
    config = cfg.to_dict()
    config.pop("output_dir")
    for key in ("x_file", "y_file", "schema_file"):
        config.pop(key)
    m = {"command": command, "config": config, "versions": versions(), **extra}
    m["manifest_sha256"] = manifest_hash({k: v for k, v in m.items() if k not in _UNHASHED})
    return m


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------

def cmd_fit(cfg: RunConfig) -> dict:
    cfg.validate("fit")
    t_start = time.perf_counter()
    d, x_names, y_names = load_dataset(cfg.x_file, cfg.y_file, cfg.schema_file,
                                       intercept=cfg.intercept, standardize=cfg.standardize)
    h = cfg.hyperparameters()
    chain = cfg.chain_config()
    inputs = {"x": file_sha256(cfg.x_file), "y": file_sha256(cfg.y_file), "schema": file_sha256(cfg.schema_file)}
    manifest = _manifest(
        cfg, "fit", inputs=inputs, dims={"n": d.n, "p": d.p, "q": d.q},
        responses=[{"name": nm, **k.to_dict()} for nm, k in zip(y_names, d.schema.kinds)],
        paths={"x": str(cfg.x_file), "y": str(cfg.y_file), "schema": str(cfg.schema_file)})
    sha = manifest["manifest_sha256"]
    base = RandomStream(cfg.seed)
    log.info("fit: n=%d p=%d q=%d method=%s", d.n, d.p, d.q, cfg.method)

    t0 = time.perf_counter()
    if cfg.method == "one-step":
        samples = run_chain(d, h, chain, base.child(0))
        sets = selection_sets(samples.summary(), cfg.gamma, d.n, cfg.screen_rule)
        selection = {"method": "one-step", **sets.to_dict(), "selected": sets.A0.tolist(), "null_model": False}
        timings = {"step1_seconds": samples.meta["seconds"]}
    else:
        est = two_step_fit(d, h, chain, cfg.gamma, rule=cfg.screen_rule, stream=base)
        draws = np.zeros((chain.retained, d.p, d.q))
        if est.step2 is not None:
            draws[:, est.sets.Jn] = est.step2.B
        samples = PosteriorSamples(draws, column_ids=d.column_ids, meta=dict(est.step1.meta))
        selection = {"method": "two-step", **est.sets.to_dict(), "selected": est.selected.tolist(),
                     "step1_A0": est.sets.A0.tolist(), "null_model": est.null_model}
        timings = {"step1_seconds": est.step1.meta["seconds"],
                   "step2_seconds": est.step2.meta["seconds"] if est.step2 is not None else 0.0}
    timings["chain_seconds"] = time.perf_counter() - t0

    out = Path(cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        summary = samples.summary(cfg.lower, cfg.upper)
        write_summary(out / "summary.csv", summary, sha, d.column_ids, x_names)
        selection["selected_names"] = [x_names[j] for j in selection["selected"]]
        selection["manifest_sha256"] = sha
        write_json(out / "selection.json", selection)
        write_draws(out / "draws.bin", samples, sha, x_names)
        timings["total_seconds"] = time.perf_counter() - t_start
        manifest["timings"] = timings
        write_json(out / "manifest.json", manifest)
    except OSError as exc:
        raise InputError(f"{out}: cannot write results ({exc})") from exc
    log.info("fit: selected %d predictors; results in %s", len(selection["selected"]), out)
    return {"manifest": manifest, "selection": selection, "summary": summary}


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def _fmt_cell(agg: dict, metric: str) -> str:
    c = agg[metric]
    return f"{c['mean']:.2f} ({c['sd']:.3f})"


def write_simulation(out: Path, table, sha: str, label: str = ""):
    agg = table.aggregate()
    methods = table.methods
    with open(out / "aggregate.csv", "w", newline="") as fh:
        fh.write(f"# manifest_sha256={sha}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric"] + [f"{m}_{s}" for m in methods for s in ("mean", "sd")])
        for name in METRIC_NAMES:
            w.writerow([name] + [f"{agg[m][name][s]:.17g}" for m in methods for s in ("mean", "sd")])
    cols = ["replicate", "method", *METRIC_NAMES, "tp", "fp", "tn", "fn", "Kn", "screened_all", "null_model"]
    with open(out / "replicates.csv", "w", newline="") as fh:
        fh.write(f"# manifest_sha256={sha}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in table.rows:
            w.writerow([f"{r[c]:.17g}" if isinstance(r.get(c), float) else r.get(c, "") for c in cols])
    width = max(12, *(len(m) + 2 for m in methods))
    lines = [label, "".ljust(8) + "".join(m.rjust(width + 4) for m in methods)]
    for name in METRIC_NAMES:
        lines.append(name.ljust(8) + "".join(_fmt_cell(agg[m], name).rjust(width + 4) for m in methods))
    done = agg[methods[0]]["replicates"] if methods else 0
    lines.append(f"replicates: {done}, failures: {len(table.failures)}")
    (out / "table.txt").write_text("\n".join(lines) + "\n")
    write_json(out / "simulation.json", {"manifest_sha256": sha, **table.to_dict()})
    return "\n".join(lines)


def cmd_simulate(cfg: RunConfig, grid: bool = False) -> list[dict]:
    cfg.validate("simulate")
    h = cfg.hyperparameters()
    chain = cfg.chain_config()
    if grid:
        cells = [(spec, cfg.replicates) for spec, _ in paper_grid(R=cfg.replicates)]
        cells = [(dataclasses.replace(spec, seed=cfg.data_seed), R) for spec, R in cells]
        method = "both"
    else:
        cells = [(cfg.scenario_spec(), cfg.replicates)]
        method = cfg.method
    results = []
    for spec, R in cells:
        run_cfg = cfg.override(scenario=spec.scenario, p=spec.p, method=method)
        out = Path(cfg.output_dir) / (f"scenario{spec.scenario}_p{spec.p}" if grid else "")
        manifest = _manifest(run_cfg, "simulate", scenario={"mix": list(spec.mix), "q": spec.q})
        sha = manifest["manifest_sha256"]
        log.info("simulate: scenario %d, p=%d, %s, R=%d", spec.scenario, spec.p, method, R)
        t0 = time.perf_counter()

        def progress(res):
            rep, _, err = res
            log.info("  replicate %d done%s", rep, f" (failed: {err})" if err else "")

        table = run_replicates(spec, h, chain, method, R, cfg.gamma, cfg.screen_rule, progress=progress)
        try:
            out.mkdir(parents=True, exist_ok=True)
            text = write_simulation(out, table, sha, f"scenario {spec.scenario} ({', '.join(spec.mix)}), "
                                                     f"n={spec.n}, p={spec.p}")
            manifest["timings"] = {"total_seconds": time.perf_counter() - t0}
            write_json(out / "manifest.json", manifest)
        except OSError as exc:
            raise InputError(f"{out}: cannot write results ({exc})") from exc
        print(text)
        results.append({"spec": spec, "table": table, "manifest": manifest})
    return results


# ---------------------------------------------------------------------------
# summarize
# ---------------------------------------------------------------------------

def cmd_summarize(draws_file, lower=0.025, upper=0.975, out=None):
    if not 0 < lower < 0.5 < upper < 1:
        raise ValidationError("interval levels must satisfy 0 < lower < 0.5 < upper < 1")
    samples, header = read_draws(draws_file)
    summary = samples.summary(lower, upper)
    target = out if out is not None else sys.stdout
    try:
        write_summary(target, summary, header["manifest_sha256"], samples.column_ids, header.get("names"))
    except OSError as exc:
        raise InputError(f"{target}: cannot write summary ({exc})") from exc
    return summary


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

_FLAG_HELP = {
    "tau": "global shrinkage", "u": "TPBN shape u", "a": "TPBN shape a",
    "d1": "inverse-Wishart degrees of freedom (default q)", "d2": "inverse-Wishart scale",
    "gamma": "screening slack", "screen_rule": "literal | strict-max | exclude-band",
    "method": "one-step | two-step | both (simulate only)",
    "coef_range_cont": "JSON list of [low, high] intervals",
    "coef_range_count": "JSON list of [low, high] intervals",
}


def _add_config_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="JSON run configuration; flags override its values")
    for f in dataclasses.fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.type == "bool":
            parser.add_argument(flag, dest=f.name, action=argparse.BooleanOptionalAction, default=None)
        else:
            parser.add_argument(flag, dest=f.name, default=None, metavar=f.name.upper(),
                                help=_FLAG_HELP.get(f.name))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mtmbsp", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    fit = sub.add_parser("fit", help="fit one dataset")
    _add_config_flags(fit)
    sim = sub.add_parser("simulate", help="run simulation replicates")
    _add_config_flags(sim)
    sim.add_argument("--paper-grid", action="store_true",
                     help="every scenario 1-6 at p in {500, 1000, 2000}, both methods, 100 replicates")
    summ = sub.add_parser("summarize", help="recompute the quantile table from a draws file")
    summ.add_argument("draws")
    summ.add_argument("--lower", type=float, default=0.025)
    summ.add_argument("--upper", type=float, default=0.975)
    summ.add_argument("--out", default=None)
    return parser


def config_from_args(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    overrides = {f.name: getattr(args, f.name) for f in dataclasses.fields(RunConfig)}
    return cfg.override(**overrides)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(message)s", stream=sys.stderr)
    try:
        if args.command == "summarize":
            cmd_summarize(args.draws, args.lower, args.upper, args.out)
        else:
            cfg = config_from_args(args)
            if args.command == "fit":
                cmd_fit(cfg)
            else:
                if args.paper_grid and args.replicates is None and not args.config:
                    cfg = cfg.override(replicates=100)
                cmd_simulate(cfg, grid=args.paper_grid)
    except (ValidationError, ParameterError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (InputError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
