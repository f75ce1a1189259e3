"""``dg-risklab`` command line.

Exit status: 0 success, 1 a verified inequality or certificate failed,
2 bad input (unparsable spec/config, invalid arguments).

With ``--out PATH`` every command writes its files next to ``PATH`` (the
suffix is replaced per file) plus ``<stem>.manifest.json``; the rendering
chosen by ``--format`` always goes to stdout.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import __version__, bayes
from .distribution import build_joint
from .erm import (
    ExperimentConfig,
    capacity_sweep,
    config_echo,
    default_jobs,
    restricted_threshold_risks,
    run_experiment,
    sample_training_set,
    trial_seed,
)
from .errors import BoundViolation, ConsistencyError, RiskLabError, SpecParseError, ValidationError
from .generators import Example1Config, Figure1Config, make_example1, make_figure1
from .registry import build_generator
from .specfile import read_sections, read_spec_file
from .verify import format_report, run_verification

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2


def fmt(v) -> str:
    """CSV/table number format: 12 significant digits, '.' decimal, no locale."""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return format(v, ".12g")
    return str(v)


def to_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def to_table(header, rows) -> str:
    cells = [list(header)] + [[fmt(v) for v in row] for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells) + "\n"


@dataclass
class RunManifest:
    subcommand: str
    config: dict
    seed: int
    version: str
    outputs: list[str] = field(default_factory=list)
    argv: list[str] = field(default_factory=list)
    duration_s: float = 0.0


class Run:
    """Collects output files and the manifest of one invocation."""

    def __init__(self, args, config: dict):
        self.args = args
        self.stem = Path(args.out).with_suffix("") if args.out else None
        self.manifest = RunManifest(args.command, config, args.seed, __version__,
                                    argv=list(args.argv))
        self.t0 = time.perf_counter()

    def write(self, suffix: str, text: str) -> None:
        if self.stem is None:
            return
        path = Path(f"{self.stem}{suffix}")
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8", newline="\n")
        self.manifest.outputs.append(str(path))

    def finish(self) -> None:
        self.manifest.duration_s = round(time.perf_counter() - self.t0, 3)
        if self.stem is not None:
            path = Path(f"{self.stem}.manifest.json")
            path.write_text(json.dumps(asdict(self.manifest), indent=2) + "\n", encoding="utf-8")


def emit(args, header, rows, json_obj) -> None:
    if args.format == "json":
        sys.stdout.write(json.dumps(json_obj, indent=2) + "\n")
    elif args.format == "csv":
        sys.stdout.write(to_csv(header, rows))
    else:
        sys.stdout.write(to_table(header, rows))


# --- report -------------------------------------------------------------------


def report_record(f) -> dict:
    j = build_joint(f)
    b, r = bayes.analyze(j)
    cs = bayes.covariate_shift_certificate(j, b)
    rec = r.to_dict()
    rec["covariate_shift_certificate"] = cs.covariate_shift
    rec["zero_mass_xm_cells"] = bayes.zero_mass_xm_cells(j)
    return rec


def cmd_report(args) -> int:
    f = read_spec_file(args.spec)
    rec = report_record(f)
    run = Run(args, {"spec": str(args.spec)})
    rows = [(k, v) for k, v in rec.items()]
    run.write(".json", json.dumps(rec, indent=2) + "\n")
    run.write(".txt", to_table(("quantity", "value"), rows))
    emit(args, ("quantity", "value"), rows, rec)
    run.finish()
    return EXIT_OK


# --- verify -------------------------------------------------------------------


def _int_tuple(text, n=None):
    try:
        values = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if n is not None and len(values) != n:
        raise argparse.ArgumentTypeError(f"expected {n} integers, got {text!r}")
    return values


def _float_list(text):
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated decimals, got {text!r}") from None


def _pd_pair(text):
    values = _float_list(text)
    if len(values) != 2:
        raise argparse.ArgumentTypeError("expected GAMMA,EPSILON")
    return tuple(values)


def cmd_verify(args) -> int:
    if args.n_instances < 1:
        raise ValidationError("--n-instances must be >= 1")
    pd_params = tuple(args.pd_params) if args.pd_params else ((0.5, 0.3),)
    config = {"n_instances": args.n_instances, "sizes": list(args.sizes),
              "pd_members": args.pd_members, "pd_params": [list(p) for p in pd_params],
              "covariate_instances": args.covariate_instances, "fault": args.inject_fault}
    run = Run(args, config)
    rep = run_verification(args.n_instances, args.sizes, args.seed, args.pd_members, pd_params,
                           args.covariate_instances, fault=args.inject_fault)
    rows = [(name, st.count, st.failures, st.worst_slack) for name, st in rep.checks.items()]
    obj = {"passed": rep.passed,
           "checks": {n: asdict(st) for n, st in rep.checks.items()},
           "failures": [asdict(fl) for fl in rep.failures[:5]]}
    run.write(".json", json.dumps(obj, indent=2) + "\n")
    if args.format == "table":
        sys.stdout.write(format_report(rep) + "\n")
    else:
        emit(args, ("check", "count", "failures", "worst_slack"), rows, obj)
    if not rep.passed:
        first = rep.failures[0]
        sys.stderr.write(f"violation in check {first.check!r} on instance {first.instance} "
                         f"(slack {first.slack!r}); instance spec follows\n{first.spec}")
    run.finish()
    return EXIT_OK if rep.passed else EXIT_FAIL


# --- experiment config ---------------------------------------------------------


def _parse_n(text):
    if ".." in text:
        lo, hi = text.split("..", 1)
        return (int(lo), int(hi))
    return int(text)


def load_config(path):
    """Read ``[experiment]`` or ``[sweep]`` plus ``[generator]`` sections of a config file."""
    with open(path, encoding="utf-8") as fh:
        sections = read_sections(fh.read())
    known = {"experiment", "sweep", "generator"}
    unknown = sorted(set(sections) - known)
    if unknown:
        raise SpecParseError("unknown section", unknown[0], line=sections[unknown[0]].line)
    params = {k: v for k, (_, v) in sections["generator"].key_values().items()} \
        if "generator" in sections else {}
    return sections, params


def _typed(kv, section, key, conv, default=None, required=False):
    if key not in kv:
        if required:
            raise SpecParseError(f"missing key {key!r}", section)
        return default
    line, text = kv.pop(key)
    try:
        return conv(text)
    except (TypeError, ValueError) as exc:
        raise SpecParseError(f"{key}: {exc}", section, line=line) from None


def experiment_config_from_file(path) -> ExperimentConfig:
    sections, params = load_config(path)
    if "experiment" not in sections:
        raise SpecParseError("missing section", "experiment")
    kv = sections["experiment"].key_values()
    cfg = ExperimentConfig(
        generator=_typed(kv, "experiment", "generator", str, required=True),
        generator_params=params,
        family=_typed(kv, "experiment", "family", str, "tabular"),
        N=_typed(kv, "experiment", "N", int, 100),
        n=_typed(kv, "experiment", "n", _parse_n, 10),
        trials=_typed(kv, "experiment", "trials", int, 20),
        seed=_typed(kv, "experiment", "seed", int, 0),
        k=_typed(kv, "experiment", "k", int, 8),
        leaf=_typed(kv, "experiment", "leaf", str, "stump"),
        x_range=_typed(kv, "experiment", "x_range",
                       lambda t: tuple(float(v) for v in t.split(",")), None),
    )
    if kv:
        raise SpecParseError(f"unknown key {sorted(kv)[0]!r}", "experiment")
    return cfg


def cmd_experiment(args) -> int:
    cfg = experiment_config_from_file(args.config)
    if args.seed_given:
        cfg = ExperimentConfig(**{**asdict(cfg), "seed": args.seed})
    args.seed = cfg.seed
    run = Run(args, config_echo(cfg))
    res = run_experiment(cfg, jobs=args.jobs)
    header = ("row", "trial", "seed", "train_risk_pool", "train_risk_dg", "risk_pool", "risk_dg")
    rows = [("trial", t.trial, t.seed, t.train_risk_pool, t.train_risk_dg, t.risk_pool, t.risk_dg)
            for t in res.trials]
    agg = res.aggregate()
    names = ("train_risk_pool", "train_risk_dg", "risk_pool", "risk_dg")
    rows.append(("mean", "", "") + tuple(agg[n][0] for n in names))
    rows.append(("stderr", "", "") + tuple(agg[n][1] for n in names))
    summary = {"config": config_echo(cfg), "r_pool": res.r_pool, "r_dg": res.r_dg,
               "mean": {n: agg[n][0] for n in names}, "stderr": {n: agg[n][1] for n in names}}
    run.write(".csv", to_csv(header, rows))
    run.write(".summary.json", json.dumps(summary, indent=2) + "\n")
    emit(args, header, rows, summary)
    run.finish()
    return EXIT_OK


# --- example1 ------------------------------------------------------------------


EXAMPLE1_HEADER = ("p", "analytic_r_pool_G", "grid_r_pool_G", "grid_r_dg_F", "erm_pool_mean",
                   "erm_pool_se", "erm_dg_mean", "erm_dg_se", "r_pool_star", "r_dg_star", "r_full_star")


def example1_rows(p_list, grid_n, sample_n, per_domain, trials, seed, jobs=1) -> list[dict]:
    if per_domain < 1 or sample_n < per_domain:
        raise ValidationError("need 1 <= per_domain <= sample_n")
    rows = []
    for i, p in enumerate(p_list):
        f, analytic = make_example1(Example1Config(p, grid_n))
        j = build_joint(f)
        r = bayes.risks(j, bayes.solve_bayes(j))
        grid_pool, grid_dg = restricted_threshold_risks(f)
        cfg = ExperimentConfig("example1", {"p": p, "grid_n": grid_n}, family="threshold",
                               N=sample_n // per_domain, n=per_domain, trials=trials,
                               seed=trial_seed(seed, i) >> 1)
        agg = run_experiment(cfg, f=f, jobs=jobs).aggregate()
        rows.append({
            "p": p,
            "analytic_r_pool_G": analytic.r_pool_G,
            "grid_r_pool_G": grid_pool,
            "grid_r_dg_F": grid_dg,
            "erm_pool_mean": agg["risk_pool"][0],
            "erm_pool_se": agg["risk_pool"][1],
            "erm_dg_mean": agg["risk_dg"][0],
            "erm_dg_se": agg["risk_dg"][1],
            "r_pool_star": r.r_pool,
            "r_dg_star": r.r_dg,
            "r_full_star": r.r_full,
        })
    return rows


def cmd_example1(args) -> int:
    if any(not 0.0 < p < 1.0 for p in args.p):
        raise ValidationError("every p must lie in (0, 1)")
    config = {"p": args.p, "grid_n": args.grid_n, "sample_n": args.sample_n,
              "per_domain": args.per_domain, "trials": args.trials}
    run = Run(args, config)
    recs = example1_rows(args.p, args.grid_n, args.sample_n, args.per_domain, args.trials,
                         args.seed, args.jobs)
    rows = [tuple(r[h] for h in EXAMPLE1_HEADER) for r in recs]
    run.write(".csv", to_csv(EXAMPLE1_HEADER, rows))
    run.write(".json", json.dumps(recs, indent=2) + "\n")
    emit(args, EXAMPLE1_HEADER, rows, recs)
    run.finish()
    return EXIT_OK


# --- sweep ---------------------------------------------------------------------


def cmd_sweep(args) -> int:
    sections, params = load_config(args.config)
    if "sweep" not in sections:
        raise SpecParseError("missing section", "sweep")
    kv = sections["sweep"].key_values()
    generator = _typed(kv, "sweep", "generator", str, required=True)
    ks = _typed(kv, "sweep", "ks", lambda t: [int(v) for v in t.split(",")], [1, 2, 4, 8, 16, 32, 64])
    leaf = _typed(kv, "sweep", "leaf", str, "stump")
    x_range = _typed(kv, "sweep", "x_range", lambda t: tuple(float(v) for v in t.split(",")), None)
    mode = _typed(kv, "sweep", "mode", str, "exact")
    N = _typed(kv, "sweep", "N", int, 100)
    n = _typed(kv, "sweep", "n", _parse_n, 10)
    seed = _typed(kv, "sweep", "seed", int, 0)
    if kv:
        raise SpecParseError(f"unknown key {sorted(kv)[0]!r}", "sweep")
    if mode not in ("exact", "sample"):
        raise ValidationError("sweep mode must be 'exact' or 'sample'")
    if args.seed_given:
        seed = args.seed
    args.seed = seed
    f = build_generator(generator, params)
    config = {"generator": generator, "generator_params": params, "ks": ks, "leaf": leaf,
              "x_range": list(x_range) if x_range else None, "mode": mode, "N": N,
              "n": list(n) if isinstance(n, tuple) else n, "seed": seed}
    run = Run(args, config)
    ts = sample_training_set(f, N, n, seed) if mode == "sample" else None
    sweep = capacity_sweep(f, ks, leaf=leaf, x_range=x_range, ts=ts)
    header = ("k", "r_pool_Gk", "r_dg_Fk", "gap")
    rows = [(r.k, r.r_pool, r.r_dg, r.gap) for r in sweep]
    run.write(".csv", to_csv(header, rows))
    emit(args, header, rows, {"config": config, "rows": [dict(zip(header, r)) for r in rows]})
    run.finish()
    return EXIT_OK


# --- figure1 -------------------------------------------------------------------


def cmd_figure1(args) -> int:
    grid = args.grid
    c = Figure1Config(args.scenario, (float(grid[0]), float(grid[1]), int(grid[2])))
    f, curves = make_figure1(c)
    rec = report_record(f)
    config = {"scenario": c.scenario, "grid": list(c.grid),
              "curves": [[name, params] for name, params in c.curves]}
    run = Run(args, config)
    header = ("x", "eta1", "eta2", "eta_pooled")
    rows = [tuple(float(v) for v in row) for row in curves]
    run.write(".csv", to_csv(header, rows))
    run.write(".report.json", json.dumps(rec, indent=2) + "\n")
    if args.format == "json":
        sys.stdout.write(json.dumps({"report": rec, "curves": [dict(zip(header, r)) for r in rows]},
                                    indent=2) + "\n")
    elif args.format == "csv":
        sys.stdout.write(to_csv(header, rows))
    else:
        sys.stdout.write(to_table(("quantity", "value"), list(rec.items())))
    run.finish()
    return EXIT_OK


# --- entry point -----------------------------------------------------------------


def _grid(text):
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected X_MIN,X_MAX,N_POINTS")
    try:
        return float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed (default 0)")
    common.add_argument("--out", default=None, help="output path; sibling files share its stem")
    common.add_argument("--format", choices=("csv", "json", "table"), default="table")
    common.add_argument("--jobs", type=int, default=None,
                        help="worker processes (default: $DG_RISKLAB_JOBS or 1)")

    parser = argparse.ArgumentParser(prog="dg-risklab", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("report", parents=[common], help="Bayes risks, bounds and certificates of a spec file")
    p.add_argument("spec")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("verify", parents=[common], help="run the inequality suite on seeded instances")
    p.add_argument("--n-instances", type=int, default=1000)
    p.add_argument("--sizes", type=lambda t: _int_tuple(t, 4), default=(8, 4, 4, 6),
                   help="max |X|,K,|M|,|D| of random instances")
    p.add_argument("--pd-members", type=int, default=200)
    p.add_argument("--pd-params", type=_pd_pair, action="append",
                   help="GAMMA,EPSILON of a posterior-drift class (repeatable; default 0.5,0.3)")
    p.add_argument("--covariate-instances", type=int, default=200)
    p.add_argument("--inject-fault", choices=("margin",), default=None, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("experiment", parents=[common], help="pooling vs. domain-informed ERM trials")
    p.add_argument("config")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("example1", parents=[common], help="reproduce the disjoint-support covariate-shift example")
    p.add_argument("--p", type=_float_list, default=[0.5, 0.6, 0.7, 0.9])
    p.add_argument("--grid-n", type=int, default=200)
    p.add_argument("--sample-n", type=int, default=10_000)
    p.add_argument("--per-domain", type=int, default=10)
    p.add_argument("--trials", type=int, default=20)
    p.set_defaults(func=cmd_example1)

    p = sub.add_parser("sweep", parents=[common], help="restricted-class risks across capacities")
    p.add_argument("config")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("figure1", parents=[common], help="agree/disagree posterior curves and their report")
    p.add_argument("--scenario", choices=("agree", "disagree"), default="disagree")
    p.add_argument("--grid", type=_grid, default=(-3.0, 3.0, 121))
    p.set_defaults(func=cmd_figure1)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args.argv = argv
    args.seed_given = args.seed is not None
    if args.seed is None:
        args.seed = 0
    try:
        if args.jobs is None:
            args.jobs = default_jobs()
        return args.func(args)
    except (BoundViolation, ConsistencyError) as exc:
        sys.stderr.write(f"dg-risklab: verification failure: {exc}\n")
        return EXIT_FAIL
    except (ValidationError, OSError) as exc:
        sys.stderr.write(f"dg-risklab: input error: {exc}\n")
        return EXIT_INPUT
    except RiskLabError as exc:
        sys.stderr.write(f"dg-risklab: error: {exc}\n")
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
