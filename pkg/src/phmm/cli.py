"""Command-line front end.

Every command writes plain data files (CSV or JSON) into ``--out``; nothing is
plotted.  Stochastic commands require ``--seed``.  States are 1-based in all
files.

Exit codes: 0 on success, 1 on data/model/numeric errors, 2 on usage errors,
3 when a fit fails to converge (its report is still written).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .check import (
    compare_dwell,
    empirical_dwell,
    sample_from_posterior,
    write_comparison_csv,
    write_comparison_json,
)
from .dwell import (
    default_r_max,
    dwell_mean_overall,
    dwell_means,
    dwell_pmf_all,
    dwell_pmf_overall,
    write_dwell_csv,
    write_means_csv,
)
from .errors import PHMMError
from .estimate import FitOptions, FitResult, fit, mc_confidence
from .hmm import HMMModel, as_tpm, local_decode, read_series_csv, simulate, write_series_csv
from .link import PeriodicTPM, TrigLinkSpec
from .stationary import (
    empirical_state_frequencies,
    stationary_exact,
    stationary_hypothetical,
    write_distributions_csv,
)

log = logging.getLogger("phmm")

COMMANDS = ("simulate", "fit", "stationary", "dwell", "check", "compare")


class UsageError(Exception):
    pass


def _load_json(path):
    path = Path(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None


def load_model_or_process(path):
    """An HMMModel document, or a bare link / matrix schedule document."""
    doc = _load_json(path)
    try:
        if "link" in doc:
            return HMMModel.from_dict(doc)
        if "coeffs" in doc:
            return TrigLinkSpec.from_dict(doc)
        if "matrices" in doc:
            return PeriodicTPM.from_dict(doc)
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"{path}: invalid model specification: {exc}") from None
    raise UsageError(f"{path}: expected a model with 'link', a link with 'coeffs' or a schedule with 'matrices'")


def _require_model(args) -> HMMModel:
    if not args.model:
        raise UsageError(f"{args.command} needs --model")
    obj = load_model_or_process(args.model)
    if not isinstance(obj, HMMModel):
        raise UsageError(f"{args.command} needs a full model with emissions, {args.model} holds a state process only")
    return obj


def _processes(args) -> dict:
    """Condition tag -> PeriodicTPM for chain-only commands."""
    if not args.model:
        raise UsageError(f"{args.command} needs --model")
    obj = load_model_or_process(args.model)
    if isinstance(obj, HMMModel):
        return {k: obj.tpm(k) for k in obj.conditions}
    return {None: as_tpm(obj)}


def _require_seed(args):
    if args.seed is None:
        raise UsageError(f"{args.command} is stochastic and needs --seed")
    return args.seed


def _out_dir(args) -> Path:
    if not args.out:
        raise UsageError("--out is required")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _suffix(key) -> str:
    return "" if key is None else f"_{key}"


def _homogeneous(model: HMMModel) -> HMMModel:
    def flatten(proc):
        if not isinstance(proc, TrigLinkSpec):
            raise UsageError("--homogeneous needs a trigonometric link")
        coeffs = {p: beta[:1] for p, beta in proc.coeffs.items()}
        return TrigLinkSpec(proc.n_states, proc.period, 0, coeffs)

    procs = model.processes
    link = flatten(procs[None]) if None in procs else {k: flatten(v) for k, v in procs.items()}
    return HMMModel(link, model.emissions, model.initial_policy)


def _load_fit(args):
    if not args.fit:
        return None
    _require_seed(args)
    try:
        return FitResult.from_dict(_load_json(args.fit))
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"{args.fit}: invalid fit report: {exc}") from None


def _write_bands(path, bands, index_names):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(index_names) + ["estimate", "lower", "upper", "level"])
        for idx in np.ndindex(bands.estimate.shape):
            writer.writerow([k + 1 for k in idx] + [repr(float(bands.estimate[idx])),
                                                    repr(float(bands.lower[idx])),
                                                    repr(float(bands.upper[idx])), bands.level])


def cmd_simulate(args) -> int:
    model = _require_model(args)
    seed = _require_seed(args)
    if args.n_cycles is None or args.n_cycles < 1:
        raise UsageError("simulate needs --n-cycles >= 1")
    if args.n_series < 1:
        raise UsageError("--n-series must be >= 1")
    out = _out_dir(args)
    n_obs = args.n_cycles * model.period
    if len(model.conditions) > 1 and args.condition is None:
        raise UsageError(f"model has conditions {model.conditions}; choose one with --condition")
    seeds = np.random.SeedSequence(seed).spawn(args.n_series)
    width = len(str(args.n_series))
    paths, series = [], []
    for k, ss in enumerate(seeds):
        states, s = simulate(model, n_obs, args.start_phase, ss, condition=args.condition,
                             series_id=str(k + 1).zfill(width))
        paths.append(states)
        series.append(s)
    write_series_csv(series, out / "simulated.csv", states=paths, period=model.period)
    model.to_json(out / "model.json")
    return 0


def cmd_fit(args) -> int:
    template = _require_model(args)
    if args.homogeneous:
        template = _homogeneous(template)
    if not args.data:
        raise UsageError("fit needs --data")
    out = _out_dir(args)
    data = read_series_csv(args.data, period=template.period)
    result = fit(data, template, FitOptions(max_iterations=args.max_iter))
    result.to_json(out / "fit_result.json")
    result.model.to_json(out / "fitted_model.json")
    if not result.convergence.converged:
        log.error("fit did not converge (gradient max-norm %.3g); report written to %s",
                  result.convergence.grad_norm, out / "fit_result.json")
        return 3
    return 0


def cmd_stationary(args) -> int:
    procs = _processes(args)
    out = _out_dir(args)
    fitted = _load_fit(args)
    for key, tpm in procs.items():
        dists = [stationary_exact(tpm), stationary_hypothetical(tpm)]
        if args.n_cycles is not None:
            dists.append(empirical_state_frequencies(tpm, args.n_cycles, _require_seed(args)))
        write_distributions_csv(dists, out / f"stationary{_suffix(key)}.csv")
        if fitted is not None:
            for name in ("delta_t", "rho_t"):
                bands = mc_confidence(fitted, name, args.n_draws, args.level, args.seed, condition=key)
                _write_bands(out / f"bands_{name}{_suffix(key)}.csv", bands, ("t", "state"))
    return 0


def cmd_dwell(args) -> int:
    procs = _processes(args)
    out = _out_dir(args)
    fitted = _load_fit(args)
    for key, tpm in procs.items():
        delta = stationary_exact(tpm)
        varying, overall, means = [], [], []
        for i in range(tpm.n_states):
            r_max = args.r_max or default_r_max(tpm, i)
            varying += dwell_pmf_all(tpm, i, r_max)
            overall.append(dwell_pmf_overall(tpm, i, r_max, delta))
            means += [(i, t + 1, m) for t, m in enumerate(dwell_means(tpm, i))]
            means.append((i, None, dwell_mean_overall(tpm, i, delta)))
        sfx = _suffix(key)
        write_dwell_csv(varying, out / f"dwell_time_varying{sfx}.csv")
        write_dwell_csv(overall, out / f"dwell_overall{sfx}.csv")
        write_means_csv(means, out / f"dwell_means{sfx}.csv")
        if fitted is not None:
            bands = mc_confidence(fitted, "dwell_mean_t", args.n_draws, args.level, args.seed, condition=key)
            _write_bands(out / f"bands_dwell_mean_t{sfx}.csv", bands, ("state", "t"))
            bands = mc_confidence(fitted, "dwell_pmf_overall", args.n_draws, args.level, args.seed,
                                  condition=key, r_max=args.r_max)
            _write_bands(out / f"bands_dwell_pmf_overall{sfx}.csv", bands, ("state", "r"))
    return 0


def _segments(series, key):
    """Index arrays of the maximal runs of observations under condition ``key``."""
    if key is None:
        return [np.arange(len(series))]
    mask = np.array([c == key for c in series.conditions()])
    edges = np.flatnonzero(np.diff(np.concatenate([[0], mask.astype(int), [0]])))
    return [np.arange(a, b) for a, b in zip(edges[::2], edges[1::2])]


def run_check(model: HMMModel, data, n_seq: int, seed, r_max=None):
    """Dwell comparisons per condition and state for one model."""
    rng = np.random.default_rng(seed)
    draws = [sample_from_posterior(local_decode(model, s), n_seq, rng) for s in data]
    results = {}
    for key in model.conditions:
        tpm = model.tpm(key)
        delta = stationary_exact(tpm)
        blocks = [d[:, seg] for d, s in zip(draws, data) for seg in _segments(s, key) if seg.size]
        if not blocks:
            log.warning("no observations under condition %r; skipped", key)
            continue
        comps = []
        for i in range(model.n_states):
            rm = r_max or default_r_max(tpm, i)
            analytic = dwell_pmf_overall(tpm, i, rm, delta)
            comps.append(compare_dwell(analytic, empirical_dwell(blocks, i, rm)))
        results[key] = comps
    return results


def _check_inputs(args):
    model = _require_model(args)
    seed = _require_seed(args)
    if not args.data:
        raise UsageError(f"{args.command} needs --data")
    if args.n_seq < 1:
        raise UsageError("--n-seq must be >= 1")
    return model, seed, read_series_csv(args.data, period=model.period)


def cmd_check(args) -> int:
    model, seed, data = _check_inputs(args)
    out = _out_dir(args)
    for key, comps in run_check(model, data, args.n_seq, seed, args.r_max).items():
        sfx = _suffix(key)
        write_comparison_csv(comps, out / f"dwell_check{sfx}.csv")
        write_comparison_json(comps, out / f"dwell_check{sfx}.json", n_seq=args.n_seq, condition=key)
    return 0


def cmd_compare(args) -> int:
    if not args.alt_model:
        raise UsageError("compare needs --alt-model")
    alt = load_model_or_process(args.alt_model)
    if not isinstance(alt, HMMModel):
        raise UsageError("--alt-model must be a full model with emissions")
    model, seed, data = _check_inputs(args)
    out = _out_dir(args)
    summary = {"n_seq": args.n_seq, "models": {}}
    rows = []
    for name, m in (("model", model), ("alt_model", alt)):
        res = run_check(m, data, args.n_seq, seed, args.r_max)
        summary["models"][name] = {
            str(key): [c.summary() for c in comps] for key, comps in res.items()
        }
        for key, comps in res.items():
            for c in comps:
                for r, a, e in zip(c.r, c.analytic, c.empirical):
                    rows.append([name, "" if key is None else key, c.state + 1, int(r), repr(float(a)), repr(float(e))])
    with open(out / "compare.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["model", "condition", "state", "r", "analytic", "empirical"])
        writer.writerows(rows)
    (out / "compare.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="phmm", description="Periodically inhomogeneous HMM toolkit")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--model", help="model JSON (or bare link / schedule JSON for stationary and dwell)")
    parser.add_argument("--alt-model", help="second model JSON for compare")
    parser.add_argument("--data", help="observations CSV with columns id, phase, count[, condition]")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--seed", type=int, help="RNG seed; required by stochastic commands")
    parser.add_argument("--fit", help="fit_result.json; adds Monte Carlo bands to stationary and dwell")
    parser.add_argument("--n-cycles", type=int, help="cycles to simulate")
    parser.add_argument("--n-series", type=int, default=1, help="independent series to simulate")
    parser.add_argument("--start-phase", type=int, default=1)
    parser.add_argument("--condition", help="condition tag for simulate")
    parser.add_argument("--r-max", type=int, help="dwell-time support; default per state from the tail bound")
    parser.add_argument("--n-seq", type=int, default=1000, help="decoded sequences to draw")
    parser.add_argument("--n-draws", type=int, default=1000, help="Monte Carlo draws for bands")
    parser.add_argument("--level", type=float, default=0.95)
    parser.add_argument("--max-iter", type=int, default=500)
    parser.add_argument("--homogeneous", action="store_true", help="fit with no harmonics")
    return parser


HANDLERS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "stationary": cmd_stationary,
    "dwell": cmd_dwell,
    "check": cmd_check,
    "compare": cmd_compare,
}


def _cap_threads():
    cap = os.environ.get("PHMM_THREADS")
    if not cap:
        return
    import numba

    try:
        numba.set_num_threads(max(1, min(int(cap), numba.config.NUMBA_NUM_THREADS)))
    except ValueError:
        log.warning("ignoring PHMM_THREADS=%r", cap)


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="phmm: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    _cap_threads()
    try:
        return HANDLERS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"phmm: error: {exc}", file=sys.stderr)
        return 2
    except (PHMMError, ValueError, OSError) as exc:
        print(f"phmm {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
