"""Command-line front end.

Subcommands::

    gen          sample a stroke dictionary and concept book and dump them as JSON
    retrieve     run one retrieval pass and print the full trace
    bounds       evaluate a named bound, e.g. ``bounds overlap --P 10 --L 3 --M 100 --t 1``
    experiment   Monte Carlo retrieval rates against their bounds
    recovery     exact stroke recovery rates (``--used-only`` checks used strokes only)
    energy-demo  gradient descent on the two-layer energy

Exit status: 0 success, 1 invalid input, 2 a rate exceeded its bound beyond
tolerance, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import sys
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path

import numpy as np

from . import bounds, energy, montecarlo, retrieval
from .core_model import (
    STREAM_TARGET,
    compose_cue,
    substream,
)
from .errors import NumericalError, StrokeMemError

EXIT_OK, EXIT_INPUT, EXIT_ACCEPTANCE, EXIT_NUMERICAL = 0, 1, 2, 3

DEFAULT_CONFIG = {
    "schema": montecarlo.SCHEMA_VERSION,
    "params": {
        "n_features": 4096,
        "n_strokes": 200,
        "n_concepts": 20,
        "kappa": 0.5,
        "size": {"kind": "fixed", "L": 4},
    },
    "good_event": {"delta": 0.25, "rho": 1},
    "decoder": {"kind": "plain", "window": None},
    "n_trials": 1000,
    "master_seed": 0,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def tool_version():
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def fmt(x):
    """Locale-independent text for a number: integers exactly, reals to 6 significant digits."""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".6g")


def _round6(x):
    return float(format(float(x), ".6g"))


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def load_config(path):
    if path is None:
        return copy.deepcopy(DEFAULT_CONFIG)
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    with p.open(encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise UsageError("config file must hold a JSON object")
    merged = copy.deepcopy(DEFAULT_CONFIG)
    for key, value in data.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key].update(value)
        else:
            merged[key] = value
    return merged


def _set_path(cfg, dotted, value):
    node = cfg
    keys = dotted.split(".")
    for k in keys[:-1]:
        node = node.setdefault(k, {})
    node[keys[-1]] = value


def apply_overrides(cfg, args):
    """Fold explicit command-line flags into a config dictionary."""
    flag_paths = {
        "n_features": "params.n_features",
        "n_strokes": "params.n_strokes",
        "n_concepts": "params.n_concepts",
        "kappa": "params.kappa",
        "delta": "good_event.delta",
        "rho": "good_event.rho",
        "trials": "n_trials",
        "seed": "master_seed",
        "target_rule": "target_rule",
        "target_index": "target_index",
        "t": "t",
        "exact_scope": "exact_scope",
        "resample": "resample",
        "score": "decoder.kind",
        "a": "decoder.a",
        "b": "decoder.b",
    }
    for attr, path in flag_paths.items():
        value = getattr(args, attr, None)
        if value is not None:
            _set_path(cfg, path, value)
    if getattr(args, "L", None) is not None:
        cfg["params"]["size"] = {"kind": "fixed", "L": args.L}
    if getattr(args, "poisson", None) is not None:
        cfg["params"]["size"] = {"kind": "poisson", "lam": args.poisson}
    if getattr(args, "window", None) is not None:
        cfg["decoder"]["window"] = list(args.window)
    if getattr(args, "cue_noise", None) is not None:
        cfg["cue_noise"] = list(args.cue_noise)
    if getattr(args, "used_only", False):
        cfg["used_only"] = True
    return cfg


def build_config(args):
    cfg = apply_overrides(load_config(getattr(args, "config", None)), args)
    return montecarlo.TrialConfig.from_dict(cfg)


def parse_sweep(spec):
    """``params.n_features=256,1024`` -> ``("params.n_features", [256, 1024])``."""
    if "=" not in spec:
        raise UsageError(f"sweep must look like key=v1,v2,... (got {spec!r})")
    key, values = spec.split("=", 1)
    parsed = [_parse_value(v) for v in values.split(",") if v]
    if not parsed:
        raise UsageError(f"sweep {spec!r} lists no values")
    return key, parsed


def _parse_value(text):
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def _write_outputs(files, manifest):
    """Write every file at the end and record its digest in the manifest."""
    digests = {}
    for path, text in files.items():
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        data = text.encode("utf-8")
        path.write_bytes(data)
        digests[str(path)] = hashlib.sha256(data).hexdigest()
    manifest["files"] = digests


def _manifest(config, seed, started):
    return {
        "tool": "strokemem",
        "version": tool_version(),
        "config": config,
        "master_seed": seed,
        "started": started,
        "finished": _now(),
    }


def report_document(report, manifest):
    d = report.to_dict(timing=False)
    comparisons = [{**c, "empirical": _round6(c["empirical"])} for c in d["comparisons"]]
    return {
        "schema": montecarlo.SCHEMA_VERSION,
        "manifest": manifest,
        "rates": {k: _round6(v) for k, v in d["rates"].items()},
        "half_widths": {k: _round6(v) for k, v in d["half_widths"].items()},
        "bounds": d["bounds"],
        "comparisons": comparisons,
        "per_size": d["per_size"],
        "certificate_violations": d["certificate_violations"],
        "notes": d["notes"],
        "passed": report.passed,
    }


def _dump(doc):
    return json.dumps(doc, indent=2, sort_keys=False, allow_nan=True) + "\n"


def _print_summary(report, out):
    for name, value in report.rates.items():
        print(f"{name} {fmt(value)}", file=out)
    for c in report.comparisons:
        status = "ok" if c["passed"] else "VIOLATED"
        print(f"check {c['rate']} {fmt(c['empirical'])} <= {fmt(c['bound'])} + "
              f"{fmt(c['k_sigma'])}*{fmt(c['sigma'])} {status}", file=out)
    if report.certificate_violations:
        print(f"certificate_violations {report.certificate_violations}", file=out)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _params(args):
    return build_config(args).params


def cmd_gen(args, out):
    params = _params(args)
    d, book = montecarlo.sample_instance(params, args.seed, 0)
    doc = {
        "schema": montecarlo.SCHEMA_VERSION,
        "params": params.to_dict(),
        "master_seed": args.seed,
        "strokes": [s.tolist() for s in d.strokes],
        "concepts": [c.tolist() for c in book.concepts],
    }
    text = _dump(doc)
    if args.out:
        _write_outputs({args.out: text}, {})
        print(f"wrote {args.out}", file=out)
    else:
        out.write(text)
    return EXIT_OK


def cmd_retrieve(args, out):
    cfg = build_config(args)
    params, gp = cfg.params, cfg.good_event
    d, book = montecarlo.sample_instance(params, cfg.master_seed, 0)
    alpha = args.target
    if alpha is None:
        alpha = cfg.target_index
    if not 0 <= alpha < book.n_concepts:
        raise UsageError(f"--target must lie in [0, {book.n_concepts - 1}]")
    target = book.concept(alpha)
    cue = compose_cue(d, target)
    ov = retrieval.overlaps(d, cue)
    act = retrieval.stroke_layer(ov, params.threshold)
    table = retrieval.concept_scores(book, act, cfg.score)
    if cfg.window is None:
        decoded = retrieval.wta_decode(table)
    else:
        decoded = retrieval.window_decode(book, act, *cfg.window, kind=cfg.score)
    err = retrieval.error_counts(act, target)
    trace = {
        "target": alpha,
        "target_strokes": target.tolist(),
        "threshold": params.threshold,
        "cue_weight": cue.weight,
        "target_overlaps": ov[target].tolist(),
        "target_stroke_weights": d.weights[target].tolist(),
        "active_strokes": act.active.tolist(),
        "false_negatives": err.false_negatives,
        "false_positives": err.false_positives,
        "good_event": retrieval.good_event(err, gp),
        "t_star": retrieval.max_overlap(book, alpha, cfg.window),
        "scores": [float(s) for s in table.scores],
        "decoded": decoded,
        "correct": decoded == alpha,
        "certified": retrieval.certify(book, act, alpha, gp, cfg.score, cfg.window),
        "used_seed": cfg.master_seed,
        "target_stream": [cfg.master_seed, 0, STREAM_TARGET],
    }
    text = _dump(trace)
    if args.out:
        _write_outputs({args.out: text}, {})
    out.write(text)
    return EXIT_OK


def _bound_kwargs(extra):
    kwargs = {}
    i = 0
    while i < len(extra):
        key = extra[i]
        if not key.startswith("--") or i + 1 >= len(extra):
            raise UsageError(f"bound parameters must be given as --name value pairs (at {key!r})")
        kwargs[key[2:].replace("-", "_")] = _parse_value(extra[i + 1])
        i += 2
    return kwargs


def cmd_bounds(args, out, extra):
    if args.name == "list":
        for name, (_, _, _, names) in sorted(bounds.REGISTRY.items()):
            print(f"{name}: {' '.join('--' + n for n in names)}", file=out)
        return EXIT_OK
    if args.name not in bounds.REGISTRY:
        raise UsageError(f"unknown bound {args.name!r}; try `bounds list`")
    kwargs = _bound_kwargs(extra)
    names = bounds.REGISTRY[args.name][3]
    unknown = set(kwargs) - set(names)
    missing = set(names) - set(kwargs)
    if unknown or missing:
        raise UsageError(f"bound {args.name} takes {' '.join('--' + n for n in names)}"
                         + (f"; unknown {sorted(unknown)}" if unknown else "")
                         + (f"; missing {sorted(missing)}" if missing else ""))
    rep = bounds.evaluate(args.name, **kwargs)
    print(fmt(rep.satisfied if rep.satisfied is not None else rep.value), file=out)
    print(json.dumps(rep.to_dict(), sort_keys=True), file=out)
    return EXIT_OK


def _run(kind, cfg, jobs):
    if kind == "recovery":
        return montecarlo.run_exact_recovery_experiment(cfg, jobs=jobs)
    return montecarlo.run_experiment(cfg, jobs=jobs)


GRID_COLUMNS = ("point", "key", "value", "n_trials", "rate", "empirical", "bound", "sigma", "passed")


def cmd_experiment(args, out, kind="experiment"):
    started = _now()
    base = apply_overrides(load_config(args.config), args)
    files = {}
    csv_dir = Path(args.csv) if args.csv else None
    if args.sweep:
        key, values = parse_sweep(args.sweep)
        points = []
        for v in values:
            c = copy.deepcopy(base)
            _set_path(c, key, v)
            points.append(montecarlo.TrialConfig.from_dict(c))
    else:
        key, values = None, [None]
        points = [montecarlo.TrialConfig.from_dict(base)]

    reports = [_run(kind, cfg, args.jobs) for cfg in points]
    passed = all(r.passed for r in reports)

    manifest = _manifest(base if args.sweep else points[0].to_dict(), points[0].master_seed, started)
    if args.sweep:
        manifest["sweep"] = {"key": key, "values": values}
        doc = {
            "schema": montecarlo.SCHEMA_VERSION,
            "manifest": manifest,
            "points": [report_document(r, {"config": r.config}) for r in reports],
            "passed": passed,
        }
        doc["rates"] = [p["rates"] for p in doc["points"]]
        doc["bounds"] = [p["bounds"] for p in doc["points"]]
        doc["comparisons"] = [p["comparisons"] for p in doc["points"]]
    else:
        doc = report_document(reports[0], manifest)

    if csv_dir is not None:
        header = (("point",) if args.sweep else ()) + montecarlo.TRIAL_COLUMNS
        rows = []
        for i, r in enumerate(reports):
            for row in montecarlo.trial_rows(r.trials):
                rows.append(([i] if args.sweep else []) + row)
        files[csv_dir / "trials.csv"] = _csv_text(header, rows)
        if args.sweep:
            grid = []
            for i, (v, r) in enumerate(zip(values, reports)):
                for c in r.comparisons:
                    grid.append([i, key, v, r.n_trials, c["rate"], c["empirical"],
                                 c["bound"], c["sigma"], int(c["passed"])])
                if not r.comparisons:
                    for name in ("failure_rate", "exact_recovery_failure_rate"):
                        grid.append([i, key, v, r.n_trials, name, r.rates[name], "", "", ""])
            files[csv_dir / "grid.csv"] = _csv_text(GRID_COLUMNS, grid)
    if files:
        _write_outputs(files, manifest)
    if args.out:
        _write_outputs({args.out: _dump(doc)}, {})

    for i, r in enumerate(reports):
        if args.sweep:
            print(f"[{key}={values[i]}]", file=out)
        _print_summary(r, out)
    print("PASS" if passed else "FAIL: a rate exceeded its bound beyond tolerance", file=out)
    return EXIT_OK if passed else EXIT_ACCEPTANCE


def cmd_energy_demo(args, out):
    rng = np.random.default_rng(substream(args.seed, 0, 0))
    w = rng.normal(size=(args.hidden, args.visible))
    # scale so the joint quadratic energy is bounded below
    w *= args.coupling / np.linalg.norm(w, 2)
    model = energy.EnergyModel(w, energy.POTENTIALS[args.potential],
                               tau_x=args.tau_x, tau_y=args.tau_y, dt=args.dt)
    x0 = args.scale * rng.normal(size=args.visible)
    y0 = args.scale * rng.normal(size=args.hidden)
    traj = energy.descend(model, x0, y0, args.steps)
    bad = energy.lyapunov_violations(traj)
    gx, gy = energy.gradient(model, traj.x[-1], traj.y[-1])
    print(f"steps {args.steps}", file=out)
    print(f"energy_start {fmt(traj.energy[0])}", file=out)
    print(f"energy_end {fmt(traj.energy[-1])}", file=out)
    print(f"gradient_norm_end {fmt(float(np.sqrt(gx @ gx + gy @ gy)))}", file=out)
    print(f"monotone {fmt(bad.size == 0)}", file=out)
    if args.csv:
        rows = [[i, float(e)] for i, e in enumerate(traj.energy)]
        text = _csv_text(("step", "energy"), rows)
        _write_outputs({Path(args.csv) / "trajectory.csv": text}, {})
    if bad.size:
        print(f"energy increased at steps {bad[:10].tolist()}", file=out)
        return EXIT_ACCEPTANCE
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _model_flags(p, seed_required=False):
    p.add_argument("--config", help="JSON config file (TrialConfig field names, schema 1)")
    p.add_argument("--N-f", dest="n_features", type=int, help="number of features")
    p.add_argument("--M", dest="n_strokes", type=int, help="number of strokes")
    p.add_argument("--P", dest="n_concepts", type=int, help="number of concepts")
    sizes = p.add_mutually_exclusive_group()
    sizes.add_argument("--L", type=int, help="fixed concept size")
    sizes.add_argument("--poisson", type=float, metavar="LAMBDA",
                       help="Poisson concept sizes conditioned on L >= 1")
    p.add_argument("--kappa", type=float, help="threshold constant, theta = kappa ln N_f")
    p.add_argument("--delta", type=float, help="allowed fraction of missed target strokes")
    p.add_argument("--rho", type=int, help="allowed number of spurious strokes")
    p.add_argument("--score", choices=("plain", "penalised", "normalised"))
    p.add_argument("--a", type=float, help="penalised score: weight of hits")
    p.add_argument("--b", type=float, help="penalised score: weight of size")
    p.add_argument("--window", type=int, nargs=2, metavar=("LO", "HI"), help="size window")
    p.add_argument("--target-index", type=int)
    p.add_argument("--seed", type=int, required=seed_required, help="master seed")


def _run_flags(p):
    p.add_argument("--trials", type=int, help="number of trials")
    p.add_argument("--target-rule", choices=montecarlo.TARGET_RULES)
    p.add_argument("--t", type=int, help="overlap level for the tail statistics")
    p.add_argument("--exact-scope", choices=montecarlo.EXACT_SCOPES)
    p.add_argument("--resample", choices=montecarlo.RESAMPLE_MODES)
    p.add_argument("--cue-noise", type=float, nargs=2, metavar=("DELETE", "INSERT"),
                   help="corrupt the cue (outside the clean-cue guarantees)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--out", help="write the JSON report here")
    p.add_argument("--csv", help="directory for trials.csv (and grid.csv with --sweep)")
    p.add_argument("--sweep", help="parameter sweep, e.g. params.n_features=256,1024,4096")


def build_parser():
    parser = _Parser(prog="strokemem", description="Two-layer stroke and concept memory toolkit.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("gen", help="sample and dump a dictionary and concept book")
    _model_flags(p)
    p.set_defaults(seed=0)
    p.add_argument("--out")

    p = sub.add_parser("retrieve", help="one retrieval pass with a full trace")
    _model_flags(p)
    p.add_argument("--target", type=int)
    p.add_argument("--out")

    p = sub.add_parser("bounds", help="evaluate a named bound (`bounds list` shows them)")
    p.add_argument("name")

    p = sub.add_parser("experiment", help="Monte Carlo retrieval against the bounds")
    _model_flags(p, seed_required=True)
    _run_flags(p)

    p = sub.add_parser("recovery", help="exact stroke recovery study")
    _model_flags(p, seed_required=True)
    _run_flags(p)
    p.add_argument("--used-only", action="store_true", help="check only strokes used by a concept")

    p = sub.add_parser("energy-demo", help="gradient descent on the two-layer energy")
    p.add_argument("--potential", choices=sorted(energy.POTENTIALS), default="quadratic")
    p.add_argument("--steps", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--visible", type=int, default=8)
    p.add_argument("--hidden", type=int, default=4)
    p.add_argument("--coupling", type=float, default=0.9, help="spectral norm of the weights")
    p.add_argument("--scale", type=float, default=1.0, help="scale of the random start")
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--tau-x", type=float, default=1.0)
    p.add_argument("--tau-y", type=float, default=0.1)
    p.add_argument("--csv", help="directory for trajectory.csv")
    return parser


def main(argv=None, out=None, err=None):
    out = out or sys.stdout
    err = err or sys.stderr
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
        if extra and args.command != "bounds":
            parser.error(f"unrecognized arguments: {' '.join(extra)}")
        if args.command == "bounds":
            return cmd_bounds(args, out, extra)
        if args.command == "gen":
            return cmd_gen(args, out)
        if args.command == "retrieve":
            return cmd_retrieve(args, out)
        if args.command in ("experiment", "recovery"):
            return cmd_experiment(args, out, args.command)
        return cmd_energy_demo(args, out)
    except UsageError as exc:
        print(exc, file=err)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=err)
        return EXIT_NUMERICAL
    except (StrokeMemError, ValueError, KeyError, TypeError, OSError) as exc:
        print(f"error: {exc}", file=err)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
