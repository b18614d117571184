"""Experiment runner: ``genpod <subcommand> [flags]`` or ``genpod run cfg.json``.

Every subcommand is a canned experiment configuration; flags override its
fields. Results go to one CSV per table and a JSON summary. Exit codes:
0 success, 2 invalid configuration, 3 numerical failure.
"""

import argparse
import csv
import io
import json
import logging
import sys
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .models import (
    ReferenceIntegrationError,
    SingularOperatorError,
    analytic_reference,
    convdiff_model,
    quadrant_map,
    toy1d_model,
    toy2d_model,
)
from .pod import RankWarning, pod_basis, projection_error_bound
from .quadrature import gauss_rule
from .uq import (
    build_reduced_model,
    monte_carlo,
    pce_factors,
    pce_sweep,
    random_snapshots,
    snapshot_pod,
    solve_reduced,
    spatial_factor,
    statistics,
)

log = logging.getLogger("genpod")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

ERROR_COLUMNS = [
    "method", "pcedim", "kprime", "mean", "variance", "ref_mean",
    "ref_variance", "rel_err_mean", "rel_err_variance", "n_solves",
    "wall_time_s",
]
PROJECTION_COLUMNS = ["method", "kprime", "realization", "projection_error"]

MODEL_KEYS = {
    "toy1d": {"lo", "hi"},
    "toy2d": {"lo1", "hi1", "lo2", "hi2", "eps"},
    "convdiff": {"grid", "kappa_bar", "param_domain", "bc", "patch"},
}
METHOD_KEYS = {
    "pce": {"pcedims"},
    "mc": {"samples", "realizations", "seed"},
    "pce-pod": {"train_pce", "eval_pce", "kprime"},
    "mc-pod": {"snapshots", "kprime", "realizations", "seed", "eval_pce"},
}


class ConfigError(ValueError):
    def __init__(self, problems):
        super().__init__("; ".join(problems))
        self.problems = list(problems)


# Configuration ===============================================================
@dataclass
class ExperimentConfig:
    name: str
    model: dict
    methods: list
    reference: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, obj):
        problems = []
        if not isinstance(obj, dict):
            raise ConfigError(["configuration must be a JSON object"])
        unknown = set(obj) - {"name", "model", "methods", "reference", "output"}
        problems += [f"unknown top-level key {k!r}" for k in sorted(unknown)]
        model = obj.get("model")
        methods = obj.get("methods")
        if not isinstance(model, dict) or "type" not in model:
            problems.append("model must be an object with a 'type'")
            model = {"type": None}
        if not isinstance(methods, list):
            problems.append("methods must be a list")
            methods = []
        cfg = cls(
            name=str(obj.get("name", "experiment")),
            model=model,
            methods=methods,
            reference=obj.get("reference") or {},
            output=obj.get("output") or {},
        )
        problems += cfg.validate()
        if problems:
            raise ConfigError(problems)
        return cfg

    def validate(self):
        p = []
        mtype = self.model.get("type")
        if mtype not in MODEL_KEYS:
            p.append(f"unknown model {mtype!r}")
        else:
            extra = set(self.model) - MODEL_KEYS[mtype] - {"type"}
            p += [f"unknown {mtype} key {k!r}" for k in sorted(extra)]
            p += _domain_problems(self.model)
        if not self.methods:
            p.append("method list is empty")
        n_dof = _n_dof(self.model)
        for j, m in enumerate(self.methods):
            if not isinstance(m, dict) or m.get("type") not in METHOD_KEYS:
                p.append(f"method {j}: unknown method "
                         f"{m.get('type') if isinstance(m, dict) else m!r}")
                continue
            t = m["type"]
            extra = set(m) - METHOD_KEYS[t] - {"type"}
            p += [f"method {j} ({t}): unknown key {k!r}" for k in sorted(extra)]
            p += [f"method {j} ({t}): {msg}" for msg in _method_problems(m, n_dof)]
        ref = self.reference
        if ref and ref.get("type") not in ("analytic", "pce"):
            p.append(f"unknown reference type {ref.get('type')!r}")
        if ref.get("type") == "analytic" and mtype == "convdiff":
            p.append("convdiff has no analytic reference; use type 'pce'")
        if ref.get("type") == "pce" and not _posint(ref.get("pcedim")):
            p.append("reference pcedim must be a positive integer")
        return p


def _posint(x):
    return isinstance(x, int) and not isinstance(x, bool) and x >= 1


def _posint_list(x):
    return isinstance(x, list) and len(x) > 0 and all(_posint(v) for v in x)


def _domain_problems(model):
    t = model["type"]
    p = []
    try:
        if t == "toy1d":
            lo, hi = model.get("lo", 3e-4), model.get("hi", 7e-4)
            if not 0 < lo < hi:
                p.append("toy1d needs 0 < lo < hi")
        elif t == "toy2d":
            for a, b in (("lo1", "hi1"), ("lo2", "hi2")):
                if not 0 < model.get(a, 3e-4) < model.get(b, 7e-4):
                    p.append(f"toy2d needs 0 < {a} < {b}")
        elif t == "convdiff":
            lo, hi = model.get("param_domain", [-2e-4, 2e-4])
            if not lo < hi:
                p.append("convdiff param_domain must have lo < hi")
            if not model.get("kappa_bar", 5e-4) + lo > 0:
                p.append("kappa_bar + lo must be positive")
            if not (_posint(model.get("grid", 32)) and model.get("grid", 32) >= 8):
                p.append("convdiff grid must be an integer >= 8")
    except (TypeError, ValueError):
        p.append("malformed parameter domain")
    return p


def _n_dof(model):
    t = model.get("type")
    if t == "toy1d":
        return 1
    if t == "toy2d":
        return 2
    if t == "convdiff":
        g = model.get("grid", 32)
        return g * g if _posint(g) else None
    return None


def _method_problems(m, n_dof):
    t = m["type"]
    p = []
    if t == "pce":
        if not _posint_list(m.get("pcedims")):
            p.append("pcedims must be a nonempty list of positive integers")
    elif t == "mc":
        if not _posint_list(m.get("samples")):
            p.append("samples must be a nonempty list of positive integers")
        if not _posint(m.get("realizations", 1)):
            p.append("realizations must be a positive integer")
        if not isinstance(m.get("seed"), int):
            p.append("a stochastic method needs an integer seed")
    elif t == "pce-pod":
        if not _posint(m.get("train_pce")):
            p.append("train_pce must be a positive integer")
        if not _posint_list(m.get("eval_pce")):
            p.append("eval_pce must be a nonempty list of positive integers")
        if not _posint_list(m.get("kprime")):
            p.append("kprime must be a nonempty list of positive integers")
        elif n_dof is not None and max(m["kprime"]) > n_dof:
            p.append(f"kprime {max(m['kprime'])} exceeds the {n_dof} spatial dofs")
    elif t == "mc-pod":
        k = m.get("snapshots")
        if not _posint(k):
            p.append("snapshots must be a positive integer")
        if not _posint_list(m.get("kprime")):
            p.append("kprime must be a nonempty list of positive integers")
        elif _posint(k) and max(m["kprime"]) > k:
            p.append(f"kprime {max(m['kprime'])} exceeds {k} snapshots")
        if _posint(k) and n_dof is not None and k > n_dof:
            p.append(f"{k} snapshots exceed the {n_dof} spatial dofs")
        if not _posint(m.get("realizations", 1)):
            p.append("realizations must be a positive integer")
        if not isinstance(m.get("seed"), int):
            p.append("a stochastic method needs an integer seed")
        if not _posint_list(m.get("eval_pce", [2])):
            p.append("eval_pce must be a nonempty list of positive integers")
    return p


def build_model(params):
    t = params["type"]
    if t == "toy1d":
        return toy1d_model(params.get("lo", 3e-4), params.get("hi", 7e-4))
    if t == "toy2d":
        return toy2d_model(params.get("lo1", 3e-4), params.get("hi1", 7e-4),
                           params.get("lo2", 3e-4), params.get("hi2", 7e-4),
                           params.get("eps", 1e-4))
    g = params.get("grid", 32)
    return convdiff_model(
        g, subdomains=quadrant_map(g, kappa_bar=params.get("kappa_bar", 5e-4)),
        bc=params.get("bc", "bottom"),
        param_domain=tuple(params.get("param_domain", (-2e-4, 2e-4))),
        patch=tuple(params.get("patch", (0.45, 0.55))),
    )


# Execution ===================================================================
def _rules(model, d):
    return [gauss_rule(m, d) for m in model.param_domains]


class Runner:
    """Executes an :class:`ExperimentConfig` and collects table rows."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.model = build_model(cfg.model)
        self.rows = []
        self.proj_rows = []
        self.records = []
        self._sweeps = {}

    def sweep(self, d):
        if d not in self._sweeps:
            t0 = time.perf_counter()
            Y = pce_sweep(self.model, _rules(self.model, d))
            self._sweeps[d] = (Y, time.perf_counter() - t0)
        return self._sweeps[d]

    def full_pce(self, d):
        Y, wall = self.sweep(d)
        return statistics(Y, _rules(self.model, d), self.model.observation,
                          wall_time=wall)

    def reference(self):
        ref = self.cfg.reference
        kind = ref.get("type", "pce" if self.model.name == "convdiff" else "analytic")
        if kind == "analytic":
            return analytic_reference(self.model), {"type": "analytic"}
        d = ref.get("pcedim") or self._finest_pce()
        r = self.full_pce(d)
        return (r.mean, r.variance), {"type": "pce", "pcedim": d}

    def _finest_pce(self):
        levels = [2]
        for m in self.cfg.methods:
            levels += m.get("pcedims", []) + m.get("eval_pce", [])
        return max(levels)

    def add(self, res, pcedim="", kprime="", method=None):
        rm, rv = self.ref
        em, ev = res.rel_errors(rm, rv)
        self.rows.append({
            "method": method or res.method, "pcedim": pcedim, "kprime": kprime,
            "mean": res.mean, "variance": res.variance,
            "ref_mean": rm, "ref_variance": rv,
            "rel_err_mean": em, "rel_err_variance": ev,
            "n_solves": res.n_solves, "wall_time_s": res.wall_time,
        })
        rec = res.to_json()
        rec.update(method=method or res.method, pcedim=pcedim, kprime=kprime,
                   rel_err_mean=em, rel_err_variance=ev)
        self.records.append(rec)

    def run(self):
        self.ref, self.ref_info = self.reference()
        for m in self.cfg.methods:
            getattr(self, "_run_" + m["type"].replace("-", "_"))(m)

    def _run_pce(self, m):
        for d in m["pcedims"]:
            self.add(self.full_pce(d), pcedim=d)

    def _run_mc(self, m):
        reps = m.get("realizations", 1)
        for n in m["samples"]:
            results = [monte_carlo(self.model, n, m["seed"] + j)
                       for j in range(reps)]
            for res in results:
                self.add(res)
            self._add_median(results, "mc-median")

    def _add_median(self, results, method, pcedim="", kprime=""):
        rm, rv = self.ref
        em = np.array([r.rel_errors(rm, rv)[0] for r in results])
        ev = np.array([r.rel_errors(rm, rv)[1] for r in results])
        med = type(results[0])(
            float(np.median([r.mean for r in results])),
            float(np.median([r.variance for r in results])),
            results[0].n_solves, float(np.sum([r.wall_time for r in results])),
            method,
        )
        self.add(med, pcedim=pcedim, kprime=kprime)
        self.records[-1].update(
            median_rel_err_mean=float(np.median(em)),
            median_rel_err_variance=float(np.median(ev)),
            median_abs_rel_err_mean=float(np.median(np.abs(em))),
            median_abs_rel_err_variance=float(np.median(np.abs(ev))),
            realizations=len(results),
        )
        # the table row reports the median signed relative errors
        self.rows[-1]["rel_err_mean"] = float(np.median(em))
        self.rows[-1]["rel_err_variance"] = float(np.median(ev))

    def _run_pce_pod(self, m):
        d_train = m["train_pce"]
        Y, wall = self.sweep(d_train)
        rules = _rules(self.model, d_train)
        factors = [spatial_factor(self.model)] + pce_factors(rules)
        full = pod_basis(Y, factors, 0, max(m["kprime"]))
        for k in m["kprime"]:
            b = full.truncate(k)
            self.proj_rows.append({
                "method": "pce-pod", "kprime": k, "realization": "",
                "projection_error": projection_error_bound(
                    [b] + [None] * self.model.n_params),
            })
            rm = build_reduced_model(self.model, rules, b)
            for d in m["eval_pce"]:
                res = solve_reduced(rm, _rules(self.model, d))
                self.add(res, pcedim=d, kprime=k)

    def _run_mc_pod(self, m):
        k = m["snapshots"]
        reps = m.get("realizations", 1)
        errs = {}
        for j in range(reps):
            _, Y = random_snapshots(self.model, k, m["seed"] + j)
            for kp in m["kprime"]:
                b, e_proj = snapshot_pod(self.model, Y, kp)
                self.proj_rows.append({"method": "mc-pod", "kprime": kp,
                                       "realization": j,
                                       "projection_error": e_proj})
                rm = build_reduced_model(self.model, _rules(self.model, 2), b)
                for d in m.get("eval_pce", [2]):
                    res = solve_reduced(rm, _rules(self.model, d), "mc-pod")
                    errs.setdefault((kp, d), []).append(res)
                    self.add(res, pcedim=d, kprime=kp)
        for (kp, d), results in errs.items():
            self._add_median(results, "mc-pod-median", pcedim=d, kprime=kp)
        for kp in m["kprime"]:
            vals = [r["projection_error"] for r in self.proj_rows
                    if r["method"] == "mc-pod" and r["kprime"] == kp
                    and r["realization"] != "median"]
            self.proj_rows.append({"method": "mc-pod", "kprime": kp,
                                   "realization": "median",
                                   "projection_error": float(np.median(vals))})


# Output ======================================================================
def fmt(x):
    """Table cell: floats with 12 significant digits."""
    if isinstance(x, (float, np.floating)):
        return f"{float(x) + 0.0:.12g}"  # no "-0"
    return str(x)


def table_csv(rows, columns, timings=True):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([
            "" if (c == "wall_time_s" and not timings) else fmt(r.get(c, ""))
            for c in columns
        ])
    return buf.getvalue()


def write_outputs(runner, outdir):
    cfg = runner.cfg
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    timings = cfg.output.get("timings", True)
    files = {}
    path = outdir / f"{cfg.name}_errors.csv"
    path.write_text(table_csv(runner.rows, ERROR_COLUMNS, timings))
    files["errors"] = str(path)
    if runner.proj_rows:
        path = outdir / f"{cfg.name}_projection.csv"
        path.write_text(table_csv(runner.proj_rows, PROJECTION_COLUMNS))
        files["projection"] = str(path)
    summary = {
        "name": cfg.name,
        "version": __version__,
        "model": cfg.model,
        "reference": {**runner.ref_info, "mean": runner.ref[0],
                      "variance": runner.ref[1]},
        "results": runner.records if timings else [
            {k: v for k, v in r.items() if k != "wall_time_s"}
            for r in runner.records
        ],
        "projection_errors": runner.proj_rows,
        "files": files,
    }
    path = outdir / f"{cfg.name}_summary.json"
    path.write_text(json.dumps(summary, indent=2, default=_json_default) + "\n")
    files["summary"] = str(path)
    return files


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def run_config(obj, outdir=None):
    """Validate and execute a configuration dict; returns an exit code."""
    try:
        cfg = ExperimentConfig.from_dict(obj)
    except ConfigError as exc:
        for msg in exc.problems:
            print(f"config error: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        runner = Runner(cfg)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RankWarning)
            runner.run()
    except (SingularOperatorError, ReferenceIntegrationError,
            np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    files = write_outputs(runner, outdir or cfg.output.get("dir", "results"))
    for kind, path in files.items():
        print(f"{kind}: {path}")
    _print_table(runner.rows)
    return EXIT_OK


def _print_table(rows):
    if not rows:
        return
    print(f"{'method':<14}{'pcedim':>7}{'kprime':>7}{'mean':>16}"
          f"{'variance':>16}{'rel_err_mean':>14}{'rel_err_var':>14}")
    for r in rows:
        if r["method"] in ("mc", "mc-pod"):
            continue
        print(f"{r['method']:<14}{str(r['pcedim']):>7}{str(r['kprime']):>7}"
              f"{r['mean']:>16.9g}{r['variance']:>16.9g}"
              f"{r['rel_err_mean']:>14.3e}{r['rel_err_variance']:>14.3e}")


# Canned experiments ==========================================================
def _ints(s):
    return [int(v) for v in s.split(",") if v.strip()]


def _canned(args):
    out = {"dir": args.out, "timings": not args.no_timings}
    if args.command == "verify-1d":
        return {"name": "verify-1d", "model": {"type": "toy1d"},
                "methods": [{"type": "pce", "pcedims": args.pcedim}],
                "output": out}
    if args.command == "verify-2d":
        return {"name": "verify-2d",
                "model": {"type": "toy2d", "eps": args.eps},
                "methods": [{"type": "pce", "pcedims": args.pcedim}],
                "output": out}
    if args.command == "mc-compare":
        names = ["toy1d", "toy2d"] if args.model == "both" else [args.model]
        return [
            {"name": f"mc-compare-{name}", "model": {"type": name},
             "methods": [{"type": "mc", "samples": args.samples,
                          "realizations": args.realizations or
                          (15 if name == "toy1d" else 11),
                          "seed": args.seed}],
             "output": out}
            for name in names
        ]
    if args.command == "convdiff-pod":
        return {"name": "convdiff-pod",
                "model": {"type": "convdiff", "grid": args.grid},
                "reference": {"type": "pce", "pcedim": args.ref_pce or
                              max(args.eval_pce)},
                "methods": [
                    {"type": "pce", "pcedims": sorted(set(args.eval_pce))},
                    {"type": "pce-pod", "train_pce": args.train_pce,
                     "eval_pce": args.eval_pce, "kprime": args.kprime},
                ],
                "output": out}
    if args.command == "rand-snap-pod":
        return {"name": "rand-snap-pod",
                "model": {"type": "convdiff", "grid": args.grid},
                "reference": {"type": "pce", "pcedim": args.ref_pce or
                              max(args.eval_pce)},
                "methods": [{"type": "mc-pod", "snapshots": args.k,
                             "kprime": args.kprime,
                             "realizations": args.realizations,
                             "seed": args.seed, "eval_pce": args.eval_pce}],
                "output": out}
    raise AssertionError(args.command)


def make_parser():
    parser = argparse.ArgumentParser(
        prog="genpod",
        description="Space x PCE Galerkin POD for PDEs with random "
                    "coefficients.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", default="results", help="output directory")
        p.add_argument("--no-timings", action="store_true",
                       help="leave wall times out so reruns are byte-identical")

    p = sub.add_parser("run", help="run a JSON experiment configuration")
    p.add_argument("config")
    p.add_argument("--out", default=None)

    for name, eps in (("verify-1d", None), ("verify-2d", 1e-4)):
        p = sub.add_parser(name, help="PCE convergence against exact values")
        p.add_argument("--pcedim", type=_ints, default=[3, 4, 5, 6])
        if eps is not None:
            p.add_argument("--eps", type=float, default=eps)
        common(p)

    p = sub.add_parser("mc-compare", help="Monte Carlo medians on toy models")
    p.add_argument("--model", choices=["toy1d", "toy2d", "both"], default="both")
    p.add_argument("--samples", type=_ints, default=[10_000, 100_000, 1_000_000])
    p.add_argument("--realizations", type=int, default=None,
                   help="default 15 for toy1d, 11 for toy2d")
    p.add_argument("--seed", type=int, default=0)
    common(p)

    p = sub.add_parser("convdiff-pod",
                       help="POD from a coarse PCE sweep, evaluated on finer grids")
    p.add_argument("--grid", type=int, default=32)
    p.add_argument("--train-pce", type=int, default=2)
    p.add_argument("--eval-pce", type=_ints, default=[2, 3, 4])
    p.add_argument("--ref-pce", type=int, default=None)
    p.add_argument("--kprime", type=_ints, default=[3, 6, 9, 12, 15, 16])
    common(p)

    p = sub.add_parser("rand-snap-pod", help="POD from random snapshots")
    p.add_argument("--grid", type=int, default=32)
    p.add_argument("--k", type=int, default=16)
    p.add_argument("--kprime", type=_ints, default=[3, 6, 9, 12, 15, 16])
    p.add_argument("--realizations", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eval-pce", type=_ints, default=[2, 3, 4])
    p.add_argument("--ref-pce", type=int, default=None)
    common(p)
    return parser


def main(argv=None):
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    if args.command == "run":
        try:
            obj = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        return run_config(obj, args.out)
    configs = _canned(args)
    if isinstance(configs, dict):
        configs = [configs]
    code = EXIT_OK
    for cfg in configs:
        code = max(code, run_config(cfg))
    return code


if __name__ == "__main__":
    sys.exit(main())
