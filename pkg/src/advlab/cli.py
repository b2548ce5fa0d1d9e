"""Command-line front end: run one twin experiment, a radius sweep, or the
standalone calculators, and persist every artifact as CSV/JSON.

Artifact layout for one run (everything except meta.json is byte-stable
across reruns of the same config and seed):

    <output_dir>/rho=<r>/seed=<s>/
        ledger.csv       one row per logged iteration
        erm.ckpt         final ERM model (RPG1 format)
        adv.ckpt         final adversarial model
        noise_hist.csv   201-bin histogram of normalized gradient noise
        summary.json     intensities, budgets, bounds, attack, accuracies
        meta.json        wall-clock timestamps only

Exit codes: 0 success, 1 at least one run failed, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import analysis, attacks, bounds, intensity, nn, privacy, training
from .config import ConfigError, ExperimentConfig, load_config, save_config, to_ini
from .data import CsvFormatError

SWEEP_COLUMNS = ("rho", "seed", "intensity_1t", "adv_accuracy", "adv_accuracy_common",
                 "attack_accuracy", "gen_gap", "eps_leading", "on_avg_bound",
                 "high_prob_bound")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _write_histogram_csv(path: Path, edges: np.ndarray, counts: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("bin_left,bin_right,count\n")
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            fh.write(f"{lo!r},{hi!r},{int(c)}\n")


def run_dir_for(cfg: ExperimentConfig, rho: float, seed: int) -> Path:
    return Path(cfg.output_dir) / f"rho={rho!r}" / f"seed={seed}"


def _budget_json(b: privacy.PrivacyBudget) -> dict:
    return {"epsilon": b.epsilon, "delta": b.delta, "provenance": b.provenance,
            "inputs": b.inputs}


def run_experiment(cfg: ExperimentConfig, rho: float, seed: int) -> dict:
    """Full per-run pipeline: train, measure, account, bound, attack, persist."""
    run_dir = run_dir_for(cfg, rho, seed)
    run_dir.mkdir(parents=True, exist_ok=True)
    started = time.time()

    train_set, test_set = cfg.load_datasets()
    loss_spec = cfg.loss_spec()
    ledger = training.train_twin(train_set, test_set, cfg.train_config(rho, seed),
                                 hidden=cfg.hidden, activation=cfg.activation,
                                 loss_spec=loss_spec)
    training.write_ledger_csv(ledger.records, run_dir / "ledger.csv")
    training.save_checkpoint(ledger.erm_net, run_dir / "erm.ckpt")
    training.save_checkpoint(ledger.adv_net, run_dir / "adv.ckpt")

    summary = {
        "rho": rho,
        "seed": seed,
        "diverged_at": ledger.diverged_at,
        "n_train": len(train_set),
        "n_test": len(test_set),
        "index_digests": {
            "erm": ledger.erm_index_digest,
            "adv": ledger.adv_index_digest,
            "match": ledger.erm_index_digest == ledger.adv_index_digest,
        },
        "erm": {"train_acc": ledger.erm_train_acc, "test_acc": ledger.erm_test_acc,
                "gen_gap": ledger.erm_train_acc - ledger.erm_test_acc},
        "adv": {"train_acc": ledger.adv_train_acc, "test_acc": ledger.adv_test_acc,
                "gen_gap": ledger.adv_train_acc - ledger.adv_test_acc},
    }
    if ledger.diverged_at is not None:
        _write_json(run_dir / "summary.json", summary)
        _write_json(run_dir / "meta.json", {"started": started, "finished": time.time()})
        raise RuntimeError(f"run rho={rho} seed={seed} diverged at t={ledger.diverged_at}")

    series = intensity.IntensitySeries.from_records(ledger.records)
    summary["intensity_1t"] = series.intensity_1t
    summary["l_erm_1t"] = series.l_erm_1t
    summary["records"] = len(ledger.records)
    summary["records_skipped"] = series.skipped

    # gradient noise and Laplace scale, taken at the final ERM iterate
    noise = privacy.collect_noise(ledger.erm_net, train_set, cfg.noise_tau,
                                  cfg.noise_batches, cfg.noise_components, seed=seed,
                                  loss_spec=loss_spec, model_tag="erm",
                                  iteration=cfg.total_iterations)
    fit = privacy.fit_laplace(noise)
    edges, counts = privacy.noise_histogram(noise.values)
    _write_histogram_csv(run_dir / "noise_hist.csv", edges, counts)
    summary["noise"] = {"b": fit.scale, "location": fit.location, "count": fit.count,
                        "divisor": noise.divisor}

    n = len(train_set)
    eps_series = [privacy.per_step_epsilon(r.l_erm, r.intensity, n, fit.scale)
                  for r in ledger.records if not r.degenerate]
    composed = privacy.compose(eps_series, cfg.delta_prime, n)
    leading = privacy.leading_epsilon(series.l_erm_1t, series.intensity_1t,
                                      cfg.total_iterations, n, fit.scale, cfg.delta_prime)
    erm_base = privacy.erm_epsilon(series.l_erm_1t, cfg.total_iterations, n,
                                   fit.scale, cfg.delta_prime)
    summary["eps_per_step"] = eps_series
    summary["budgets"] = {b.provenance: _budget_json(b) for b in (composed, leading, erm_base)}

    summary["bounds"] = []
    for gamma in cfg.gamma_list:
        rep = bounds.bound_report(leading.epsilon, leading.delta, cfg.loss_bound,
                                  n, gamma, cfg.constant_c)
        summary["bounds"].append({
            "gamma": gamma, "beta": rep.beta, "on_avg_bound": rep.on_avg_bound,
            "high_prob_bound": rep.high_prob_bound,
            "high_prob_bound_normalized": rep.high_prob_bound_normalized,
            "high_prob_bound_rescaled": rep.high_prob_bound_rescaled, "c": rep.c})

    report = attacks.optimal_threshold(
        attacks.true_label_confidences(ledger.adv_net, train_set),
        attacks.true_label_confidences(ledger.adv_net, test_set))
    summary["mia"] = {"zeta_optim": report.zeta_optim, "accuracy": report.accuracy}

    summary["adv_accuracy"] = analysis.adversarial_accuracy(
        ledger.adv_net, test_set, cfg.attack_spec(rho), loss_spec)
    # the same model under the sweep's common (largest-radius) attack, so
    # robustness is comparable across runs
    summary["adv_accuracy_common"] = analysis.adversarial_accuracy(
        ledger.adv_net, test_set, cfg.attack_spec(cfg.radius_list[-1]), loss_spec)

    _write_json(run_dir / "summary.json", summary)
    _write_json(run_dir / "meta.json", {"started": started, "finished": time.time()})
    return summary


def _run_job(args) -> tuple[float, int, dict | None, str]:
    cfg, rho, seed = args
    try:
        return rho, seed, run_experiment(cfg, rho, seed), ""
    except Exception:
        return rho, seed, None, traceback.format_exc()


def sweep_rows(summaries: list[dict]) -> list[dict]:
    rows = []
    for s in sorted(summaries, key=lambda s: (s["rho"], s["seed"])):
        rows.append({
            "rho": s["rho"], "seed": s["seed"], "intensity_1t": s["intensity_1t"],
            "adv_accuracy": s["adv_accuracy"],
            "adv_accuracy_common": s["adv_accuracy_common"],
            "attack_accuracy": s["mia"]["accuracy"],
            "gen_gap": s["adv"]["gen_gap"], "eps_leading": s["budgets"]["leading_thm5"]["epsilon"],
            "on_avg_bound": s["bounds"][0]["on_avg_bound"],
            "high_prob_bound": s["bounds"][0]["high_prob_bound"]})
    return rows


def write_sweep_csv(rows: list[dict], path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(SWEEP_COLUMNS) + "\n")
        for row in rows:
            fh.write(",".join(
                str(row[c]) if c == "seed" else repr(float(row[c]))
                for c in SWEEP_COLUMNS) + "\n")


def _fit_json(fit: analysis.PolyFit | None) -> dict | None:
    if fit is None:
        return None
    return {"coefficients": list(fit.coefficients),
            "scaled_coefficients": list(fit.scaled_coefficients),
            "x_center": fit.x_center, "x_scale": fit.x_scale, "degree": fit.degree}


def _try_fit(xs, ys, degree=4):
    try:
        return analysis.polyfit(xs, ys, degree)
    except ValueError:
        return None


def _try_spearman(xs, ys) -> float | None:
    try:
        return analysis.spearman(xs, ys)
    except ValueError:
        return None


def analyze_rows(rows: list[dict]) -> dict:
    """Sweep-level correlations and trend fits; entries degrade to null when
    a column is constant or too short."""
    col = lambda name: np.array([row[name] for row in rows])
    ii = col("intensity_1t")
    robust = [row for row in rows if row["rho"] > 0]  # attacked-training rows only
    ii_r = np.array([row["intensity_1t"] for row in robust])
    return {
        "rows": len(rows),
        "spearman": {
            "intensity_vs_radius": _try_spearman(ii, col("rho")),
            "intensity_vs_attack_accuracy": _try_spearman(ii, col("attack_accuracy")),
            "intensity_vs_gen_gap": _try_spearman(ii, col("gen_gap")),
            # Fig-1 style trend: every robust model judged by one common attack
            "intensity_vs_common_attack_accuracy":
                _try_spearman(ii_r, np.array([row["adv_accuracy_common"] for row in robust])),
            "intensity_vs_matched_attack_accuracy":
                _try_spearman(ii_r, np.array([row["adv_accuracy"] for row in robust])),
        },
        "polyfit": {
            "radius_to_intensity": _fit_json(_try_fit(col("rho"), ii)),
            "intensity_to_common_attack_accuracy":
                _fit_json(_try_fit(ii_r, np.array([row["adv_accuracy_common"] for row in robust]))),
            "intensity_to_attack_accuracy": _fit_json(_try_fit(ii, col("attack_accuracy"))),
            "intensity_to_gen_gap": _fit_json(_try_fit(ii, col("gen_gap"))),
        },
    }


def run_sweep(cfg: ExperimentConfig) -> tuple[list[dict], list[str]]:
    """Run every (rho, seed) pair, skipping finished run directories.

    Returns (summaries, failure messages). Each run writes only inside its
    own directory; the merge below is single-threaded.
    """
    jobs, summaries = [], []
    for rho in cfg.radius_list:
        for seed in cfg.seeds:
            done = run_dir_for(cfg, rho, seed) / "summary.json"
            if done.exists():
                summaries.append(json.loads(done.read_text(encoding="utf-8")))
            else:
                jobs.append((cfg, rho, seed))
    failures = []
    if jobs:
        workers = cfg.workers or min(len(jobs), os.cpu_count() or 1)
        if workers == 1:
            results = map(_run_job, jobs)
        else:
            pool = ProcessPoolExecutor(max_workers=workers)
            results = pool.map(_run_job, jobs)
        for rho, seed, summary, err in results:
            if summary is None:
                failures.append(f"rho={rho} seed={seed}:\n{err}")
            else:
                summaries.append(summary)
        if workers > 1:
            pool.shutdown()

    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = sweep_rows([s for s in summaries if s.get("diverged_at") is None])
    write_sweep_csv(rows, out / "sweep.csv")
    report = analyze_rows(rows) if len(rows) >= 3 else {"rows": len(rows)}
    report["failures"] = sorted(failures)
    _write_json(out / "analysis.json", report)
    return summaries, failures


# ---------------------------------------------------------------- commands


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    rho = args.rho if args.rho is not None else cfg.radius_list[0]
    seed = args.seed if args.seed is not None else cfg.seeds[0]
    summary = run_experiment(cfg, rho, seed)
    print(json.dumps(summary, sort_keys=True, indent=2))
    return 0


def _cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    _, failures = run_sweep(cfg)
    for f in failures:
        print(f, file=sys.stderr)
    print(f"sweep artifacts under {cfg.output_dir}/ "
          f"({len(failures)} failed run(s))" if failures else
          f"sweep artifacts under {cfg.output_dir}/")
    return 1 if failures else 0


def _cmd_report(args) -> int:
    cfg = load_config(args.config)
    summaries = []
    for rho in cfg.radius_list:
        for seed in cfg.seeds:
            p = run_dir_for(cfg, rho, seed) / "summary.json"
            if p.exists():
                summaries.append(json.loads(p.read_text(encoding="utf-8")))
    rows = sweep_rows([s for s in summaries if s.get("diverged_at") is None])
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_sweep_csv(rows, out / "sweep.csv")
    report = analyze_rows(rows) if len(rows) >= 3 else {"rows": len(rows)}
    report["failures"] = []
    _write_json(out / "analysis.json", report)
    print(f"merged {len(rows)} runs into {out / 'sweep.csv'}")
    return 0


def _read_series_csv(path) -> tuple[list[float], list[float]]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != "l_erm,intensity":
        raise CsvFormatError(f"{path}: line 1: expected header 'l_erm,intensity'")
    l_erm, intens = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != 2:
            raise CsvFormatError(f"{path}: line {lineno}: expected 2 columns")
        try:
            l_erm.append(float(cells[0]))
            intens.append(float(cells[1]))
        except ValueError:
            raise CsvFormatError(f"{path}: line {lineno}: non-numeric value") from None
    return l_erm, intens


def _cmd_accountant(args) -> int:
    if args.series:
        l_erm, intens = _read_series_csv(args.series)
    else:
        if args.l_erm is None or args.intensity is None:
            raise ConfigError("scalar mode needs --l-erm and --intensity")
        l_erm = [args.l_erm] * args.iterations
        intens = [args.intensity] * args.iterations
    eps_series = [privacy.per_step_epsilon(l, i, args.n, args.b)
                  for l, i in zip(l_erm, intens)]
    out = {"composed_thm4": _budget_json(privacy.compose(eps_series, args.delta_prime, args.n))}
    if l_erm:
        l_1t = intensity.composite_intensity(l_erm)
        i_1t = intensity.composite_intensity(intens)
        out["leading_thm5"] = _budget_json(privacy.leading_epsilon(
            l_1t, i_1t, len(l_erm), args.n, args.b, args.delta_prime))
        out["erm_corollary"] = _budget_json(privacy.erm_epsilon(
            l_1t, len(l_erm), args.n, args.b, args.delta_prime))
    else:
        out["leading_thm5"] = None
        out["erm_corollary"] = None
    print(json.dumps(out, sort_keys=True, indent=2))
    return 0


def _cmd_bounds(args) -> int:
    rep = bounds.bound_report(args.eps, args.delta, args.loss_bound, args.n,
                              args.gamma, args.c)
    print(json.dumps({
        "beta": rep.beta, "on_avg_bound": rep.on_avg_bound,
        "high_prob_bound": rep.high_prob_bound,
        "high_prob_bound_normalized": rep.high_prob_bound_normalized,
        "high_prob_bound_rescaled": rep.high_prob_bound_rescaled,
        "inputs": {"eps": rep.eps, "delta": rep.delta, "m": rep.m, "n": rep.n,
                   "gamma": rep.gamma, "c": rep.c}}, sort_keys=True, indent=2))
    return 0


def _cmd_attack(args) -> int:
    cfg = load_config(args.config)
    net = training.load_checkpoint(args.checkpoint)
    train_set, test_set = cfg.load_datasets()
    report = attacks.optimal_threshold(
        attacks.true_label_confidences(net, train_set),
        attacks.true_label_confidences(net, test_set))
    if args.sweep_csv:
        with open(args.sweep_csv, "w", encoding="utf-8") as fh:
            fh.write("zeta,accuracy\n")
            for z, a in report.sweep:
                fh.write(f"{z!r},{a!r}\n")
    print(json.dumps({"zeta_optim": report.zeta_optim, "accuracy": report.accuracy,
                      "n_train": report.n_train, "n_test": report.n_test},
                     sort_keys=True, indent=2))
    return 0


def _cmd_noise(args) -> int:
    cfg = load_config(args.config)
    net = training.load_checkpoint(args.checkpoint)
    train_set, _ = cfg.load_datasets()
    sample = privacy.collect_noise(net, train_set, cfg.noise_tau, cfg.noise_batches,
                                   cfg.noise_components, seed=args.seed,
                                   loss_spec=cfg.loss_spec())
    fit = privacy.fit_laplace(sample)
    edges, counts = privacy.noise_histogram(sample.values)
    _write_histogram_csv(Path(args.out), edges, counts)
    print(json.dumps({"b": fit.scale, "location": fit.location, "count": fit.count,
                      "divisor": sample.divisor, "histogram": args.out},
                     sort_keys=True, indent=2))
    return 0


def _cmd_probe(args) -> int:
    cfg = load_config(args.config)
    net_erm = training.load_checkpoint(args.erm_checkpoint)
    net_adv = training.load_checkpoint(args.adv_checkpoint)
    train_set, _ = cfg.load_datasets()
    n = len(train_set)
    taus = ([int(v) for v in args.taus.split(",")] if args.taus
            else [max(1, n // 8), max(1, n // 2), n])
    rows = intensity.consistency_probe(net_erm, net_adv, train_set,
                                       cfg.attack_spec(args.rho), taus,
                                       args.repeats, args.seed, cfg.loss_spec())
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("tau,mean_estimate,full_value\n")
        for r in rows:
            fh.write(f"{r.tau},{r.mean_estimate!r},{r.full_value!r}\n")
    print(f"probe table written to {args.out}")
    return 0


def _cmd_config(args) -> int:
    if args.config:
        print(to_ini(load_config(args.config)), end="")
    else:
        print(to_ini(ExperimentConfig()), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="advlab",
        description="Twin ERM/adversarial training lab: intensity, privacy, bounds")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run one twin experiment")
    p.add_argument("--config", required=True)
    p.add_argument("--rho", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("sweep", help="run the full radius x seed sweep")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("report", help="re-merge completed runs into sweep.csv")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("accountant", help="standalone privacy-budget calculator")
    p.add_argument("--series", default=None, help="CSV with header l_erm,intensity")
    p.add_argument("--l-erm", type=float, default=None, dest="l_erm")
    p.add_argument("--intensity", type=float, default=None)
    p.add_argument("--iterations", type=int, default=1)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--b", type=float, required=True)
    p.add_argument("--delta-prime", type=float, required=True, dest="delta_prime")
    p.set_defaults(func=_cmd_accountant)

    p = sub.add_parser("bounds", help="stability and generalization bounds")
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--loss-bound", type=float, default=10.0, dest="loss_bound")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--gamma", type=float, default=0.05)
    p.add_argument("--c", type=float, default=1.0)
    p.set_defaults(func=_cmd_bounds)

    p = sub.add_parser("attack", help="membership inference against a checkpoint")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--sweep-csv", default=None, dest="sweep_csv")
    p.set_defaults(func=_cmd_attack)

    p = sub.add_parser("noise", help="gradient-noise histogram and Laplace fit")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", default="noise_hist.csv")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_noise)

    p = sub.add_parser("probe", help="batch-size consistency probe")
    p.add_argument("--config", required=True)
    p.add_argument("--erm-checkpoint", required=True, dest="erm_checkpoint")
    p.add_argument("--adv-checkpoint", required=True, dest="adv_checkpoint")
    p.add_argument("--rho", type=float, required=True)
    p.add_argument("--taus", default=None, help="comma-separated batch sizes")
    p.add_argument("--repeats", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="probe.csv")
    p.set_defaults(func=_cmd_probe)

    p = sub.add_parser("config", help="print the default (or a normalized) config")
    p.add_argument("--config", default=None)
    p.set_defaults(func=_cmd_config)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (CsvFormatError, FileNotFoundError, training.CheckpointFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except RuntimeError as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
