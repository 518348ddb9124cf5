"""``conefield`` command-line entry point.

Every subcommand reads its inputs, writes its outputs with embedded
provenance (input hashes, parameters, seed, version; no timestamps) and
prints a one-line summary.  Exit status: 0 success, 1 data error, 2 usage
error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .cones import NoDataError, build_cone_database, parse_config_key
from .field import BUILTIN_RULES, FieldFormatError, SimConfig, elementary_rule, iid_rule, \
    load_fields, save_fields, simulate_ensemble
from .filtering import learn_transitions, recursive_filter
from .graph import ConeParams, GraphFormatError, parse_graph
from .info import ParentsSpec, local_complexity, markov_field_test, temporal_markov_test
from .prediction import Predictor, evaluate_predictor, predict_distribution
from .reconstruct import UNKNOWN, StateField, StateSet, TestConfig, label_field, reconstruct_states

DATA_ERRORS = (FieldFormatError, GraphFormatError, NoDataError, ValueError, KeyError,
               OSError, json.JSONDecodeError)


class UsageError(Exception):
    pass


# -- helpers ------------------------------------------------------------------------

def _read(path) -> bytes:
    return Path(path).read_bytes()


def sha256_file(path) -> str:
    return hashlib.sha256(_read(path)).hexdigest()


def provenance(command: str, inputs: dict, params: dict, seed=None) -> dict:
    return {
        "tool": "conefield",
        "version": __version__,
        "command": command,
        "inputs": {k: sha256_file(v) for k, v in sorted(inputs.items()) if v},
        "params": params,
        "seed": seed,
    }


def _prov_comment(prov: dict) -> str:
    return "provenance " + json.dumps(prov, sort_keys=True, separators=(",", ":"))


def _write(path, text: str):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def _load_graph(path):
    return parse_graph(_read(path))


def _load_fields(paths, g=None) -> list:
    out = []
    for p in paths:
        out += load_fields(_read(p), g)
    return out


def _load_states(path) -> StateSet:
    return StateSet.loads(_read(path).decode())


def _params(args) -> ConeParams:
    return ConeParams(args.c, args.past, args.future)


def _probs(text: str) -> tuple:
    try:
        vals = tuple(float(x) for x in text.split(","))
    except ValueError:
        raise UsageError(f"bad probability list {text!r}") from None
    return vals


def make_rule(name: str, epsilon: float = 0.0, probs: str = "0.5,0.5"):
    if name.startswith("elementary:"):
        try:
            number = int(name.split(":", 1)[1])
        except ValueError:
            raise UsageError(f"bad elementary rule {name!r}") from None
        return elementary_rule(number, epsilon)
    if name == "iid":
        return iid_rule(_probs(probs))
    if name not in BUILTIN_RULES:
        raise UsageError(f"unknown rule {name!r}; choose from {sorted(BUILTIN_RULES)} or elementary:N")
    rule = BUILTIN_RULES[name]()
    if epsilon:
        number = int(sum(int(b) << i for i, b in enumerate(rule.table)))
        rule = elementary_rule(number, epsilon)
    return rule


def _need_seed(args):
    if args.seed is None:
        raise UsageError(f"{args.command} is randomized; pass --seed")


def _threads(args) -> int:
    return args.threads or os.cpu_count() or 1


def read_config(path) -> dict:
    """``key = value`` lines; keys mirror long flag names."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        k, v = (x.strip() for x in line.split("=", 1))
        out[k.replace("-", "_")] = v
    return out


# -- subcommands ------------------------------------------------------------------

def cmd_simulate(args) -> int:
    _need_seed(args)
    g = _load_graph(args.graph)
    rule = make_rule(args.rule, args.epsilon, args.probs)
    init = ("iid", _probs(args.init_probs)) if args.init_probs else ("iid", tuple([1.0 / rule.alphabet_size]
                                                                                   * rule.alphabet_size))
    fields = simulate_ensemble(g, rule, SimConfig(args.steps, args.seed, init), args.runs)
    prov = provenance("simulate", {"graph": args.graph},
                      {"rule": args.rule, "epsilon": args.epsilon, "probs": args.probs,
                       "init_probs": list(init[1]), "steps": args.steps, "runs": args.runs}, args.seed)
    _write(args.output, save_fields(fields, [_prov_comment(prov)]))
    print(f"simulated {args.runs} run(s) x {args.steps} steps on {g.vertex_count} vertices", file=sys.stderr)
    return 0


def _database(args, g, p):
    fields = _load_fields(args.field, g)
    return build_cone_database(fields, g, p, pooling=args.pooling, threads=_threads(args))


def cmd_cones(args) -> int:
    g = _load_graph(args.graph)
    p = _params(args)
    db = _database(args, g, p)
    doc = db.to_json()
    doc["provenance"] = provenance("cones", {"graph": args.graph, **_field_inputs(args.field)},
                                   {**p.to_dict(), "pooling": args.pooling})
    _write(args.output, _dump_json(doc))
    print(f"counted {db.total} cone pairs in {len(db.classes)} vertex classes", file=sys.stderr)
    return 0


def _field_inputs(paths) -> dict:
    return {f"field{i}": p for i, p in enumerate(paths)}


def _test_config(args) -> TestConfig:
    return TestConfig(alpha=args.alpha, test=args.test, n_perm=args.n_perm,
                      min_expected=args.min_expected, perm_seed=args.seed or 0)


def cmd_reconstruct(args) -> int:
    _need_seed(args)
    g = _load_graph(args.graph)
    p = _params(args)
    db = _database(args, g, p)
    s = reconstruct_states(db, _test_config(args), args.seed, refine=args.refine)
    s.provenance = {**s.provenance, **provenance(
        "reconstruct", {"graph": args.graph, **_field_inputs(args.field)},
        {**p.to_dict(), "pooling": args.pooling}, args.seed)}
    _write(args.output, s.dumps())
    counts = s.state_counts()
    print(f"{sum(counts)} states over {len(counts)} vertex classes (max {max(counts)} per class)",
          file=sys.stderr)
    return 0


def cmd_label(args) -> int:
    s = _load_states(args.states)
    fields = _load_fields(args.field, s.graph)
    prov = provenance("label", {"states": args.states, **_field_inputs(args.field)}, {})
    text = _prov_comment(prov) + "\n"
    known = total = 0
    for f in fields:
        sf = label_field(f, s)
        text += sf.dumps()
        known += int(sf.known().sum())
        total += sf.labels.size
    _write(args.output, "# " + text)
    print(f"labelled {known} of {total} points", file=sys.stderr)
    return 0


def cmd_predict(args) -> int:
    s = _load_states(args.states)
    vc = next((sc.vertex_class for sc in s.classes if args.vertex in sc.vertex_class.members), None)
    if vc is None:
        raise UsageError(f"vertex {args.vertex} is not in the graph")
    past = parse_config_key(args.past)
    if len(past) != len(vc.past_offsets):
        raise ValueError(f"past needs {len(vc.past_offsets)} symbols in the order {list(vc.past_offsets)}")
    outcomes, probs = predict_distribution(Predictor(s, args.mode), past, vc.index)
    doc = {"class": vc.index, "mode": args.mode, "past": list(past),
           "distribution": [{"outcome": list(o) if isinstance(o, tuple) else o, "p": float(q)}
                            for o, q in zip(outcomes, probs)],
           "provenance": provenance("predict", {"states": args.states},
                                    {"vertex": args.vertex, "mode": args.mode})}
    _write(args.output, _dump_json(doc))
    return 0


def cmd_evaluate(args) -> int:
    s = _load_states(args.states)
    fields = _load_fields(args.field, s.graph)
    rep = evaluate_predictor(Predictor(s, args.mode), fields)
    if args.report:
        doc = {"report": rep.to_dict(),
               "provenance": provenance("evaluate", {"states": args.states, **_field_inputs(args.field)},
                                        {"mode": args.mode})}
        _write(args.report, _dump_json(doc))
    _write(args.output, rep.tsv() + "\n")
    return 0


def cmd_filter(args) -> int:
    s = _load_states(args.states)
    fields = _load_fields(args.field, s.graph)
    train = _load_fields(args.train, s.graph) if args.train else fields
    tt = learn_transitions([label_field(f, s) for f in train], train, s.graph, s.params, s.pooling)
    prov = provenance("filter", {"states": args.states, **_field_inputs(args.field),
                                 **{f"train{i}": p for i, p in enumerate(args.train or [])}},
                      {"hide_rows": args.hide_rows})
    grid = "# " + _prov_comment(prov) + "\n"
    summaries = []
    for f in fields:
        sf = label_field(f, s)
        lab = sf.labels.copy()
        lab[: args.hide_rows] = UNKNOWN
        est = recursive_filter(f, s, tt, labels=StateField(lab, sf.vertex_class))
        grid += est.dumps()
        summaries.append(est.summary(slice(s.params.past_depth - 1, None)))
    _write(args.output, grid)
    summary = {k: float(np.mean([d[k] for d in summaries])) for k in ("singleton_fraction", "coverage")}
    summary["contradiction_count"] = int(sum(d["contradiction_count"] for d in summaries))
    summary["conflicting_keys"] = len(tt.conflicts())
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_complexity(args) -> int:
    s = _load_states(args.states)
    fields = _load_fields(args.field, s.graph)
    db = build_cone_database(fields, s.graph, s.params, s.pooling, threads=_threads(args))
    sfs = [label_field(f, s) for f in fields]
    merged = StateField(np.vstack([x.labels for x in sfs]), sfs[0].vertex_class)
    rep = local_complexity(merged, db, s)
    if args.format == "csv":
        _write(args.output, rep.to_csv())
    else:
        doc = rep.to_dict()
        doc["provenance"] = provenance("complexity", {"states": args.states, **_field_inputs(args.field)}, {})
        _write(args.output, _dump_json(doc))
    return 0


def cmd_markov_test(args) -> int:
    s = _load_states(args.states)
    fields = _load_fields(args.field, s.graph)
    sfs = [label_field(f, s) for f in fields]
    classes = [sc.vertex_class for sc in s.classes]
    if args.kind == "temporal":
        rep = temporal_markov_test(sfs, ParentsSpec.from_graph(s.graph, classes), args.lag, args.threshold)
    else:
        rep = markov_field_test(sfs, s.graph, args.distance, args.lag, args.threshold)
    doc = {"kind": args.kind, "report": rep.to_dict(),
           "provenance": provenance("markov-test", {"states": args.states, **_field_inputs(args.field)},
                                    {"kind": args.kind, "lag": args.lag, "distance": args.distance})}
    _write(args.output, _dump_json(doc))
    return 0


def cmd_pipeline(args) -> int:
    """simulate -> reconstruct -> evaluate, writing everything under ``--outdir``."""
    _need_seed(args)
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    train, held, states = out / "train.fld", out / "heldout.fld", out / "states.json"
    base = dict(vars(args))
    sim = argparse.Namespace(**{**base, "command": "simulate", "output": str(train)})
    cmd_simulate(sim)
    cmd_simulate(argparse.Namespace(**{**base, "command": "simulate", "output": str(held),
                                       "seed": args.seed + 1}))
    cmd_reconstruct(argparse.Namespace(**{**base, "command": "reconstruct", "field": [str(train)],
                                          "output": str(states)}))
    cmd_evaluate(argparse.Namespace(**{**base, "states": str(states), "field": [str(held)],
                                       "report": str(out / "evaluation.json"),
                                       "output": str(out / "evaluation.tsv")}))
    print((out / "evaluation.tsv").read_text().splitlines()[-1])
    return 0


# -- parser ---------------------------------------------------------------------------

def _cone_flags(p):
    p.add_argument("--c", type=int, default=1, help="propagation speed (hops per step)")
    p.add_argument("--past", type=int, default=2, help="past cone depth (time slices)")
    p.add_argument("--future", type=int, default=1, help="future cone depth")
    p.add_argument("--pooling", action=argparse.BooleanOptionalAction, default=True,
                   help="pool vertices with isomorphic cones")


def _sim_flags(p):
    p.add_argument("--graph", required=True, help="graph file ('graph <n>' edge list)")
    p.add_argument("--rule", default="shift", help="shift, rule184, iid or elementary:N")
    p.add_argument("--steps", type=int, default=1000, help="time steps per run")
    p.add_argument("--runs", type=int, default=1, help="independent runs (ensemble)")
    p.add_argument("--epsilon", type=float, default=0.0, help="noise flip probability")
    p.add_argument("--probs", default="0.5,0.5", help="symbol probabilities of the iid rule")
    p.add_argument("--init-probs", default=None, help="iid law of the initial slice")


def _test_flags(p):
    p.add_argument("--alpha", type=float, default=0.001, help="significance level")
    p.add_argument("--test", choices=("chi2", "permutation"), default="chi2")
    p.add_argument("--n-perm", type=int, default=1000, help="permutations for --test permutation")
    p.add_argument("--min-expected", type=float, default=5.0, help="chi-square bin pooling threshold")
    p.add_argument("--refine", action="store_true", help="one reassignment pass after clustering")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="conefield",
                                     description="Local causal states of space-time fields on graphs.")
    parser.add_argument("--version", action="store_true", help="print the version and exit")
    parser.add_argument("--json", action="store_true", help="with --version: machine-readable output")
    sub = parser.add_subparsers(dest="command", metavar="command")

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_, description=help_)
        p.set_defaults(func=func)
        p.add_argument("--config", help="key=value file of defaults; flags override it")
        p.add_argument("--seed", type=int, default=None, help="random seed (required when randomized)")
        p.add_argument("--threads", type=int, default=0, help="worker cap (default: all cores)")
        p.add_argument("-o", "--output", default="-", help="output path ('-' for stdout)")
        return p

    p = add("simulate", cmd_simulate, "Simulate a field series on a graph.")
    _sim_flags(p)
    p = add("cones", cmd_cones, "Count past/future cone configurations.")
    p.add_argument("--graph", required=True)
    p.add_argument("--field", action="append", required=True, help="field file (repeatable)")
    _cone_flags(p)
    p = add("reconstruct", cmd_reconstruct, "Reconstruct local causal states.")
    p.add_argument("--graph", required=True)
    p.add_argument("--field", action="append", required=True)
    _cone_flags(p)
    _test_flags(p)
    p = add("label", cmd_label, "Label every point of a field with its state.")
    p.add_argument("--states", required=True)
    p.add_argument("--field", action="append", required=True)
    p = add("predict", cmd_predict, "Predictive distribution for one past configuration.")
    p.add_argument("--states", required=True)
    p.add_argument("--vertex", type=int, required=True)
    p.add_argument("--past", required=True, help="comma-separated past cone symbols")
    p.add_argument("--mode", choices=("full", "marginal"), default="full")
    p = add("evaluate", cmd_evaluate, "Log loss / accuracy on held-out data (TSV).")
    p.add_argument("--states", required=True)
    p.add_argument("--field", action="append", required=True)
    p.add_argument("--mode", choices=("full", "marginal"), default="marginal")
    p.add_argument("--report", default=None, help="also write the JSON report here")
    p = add("filter", cmd_filter, "Run the recursive set-valued state filter.")
    p.add_argument("--states", required=True)
    p.add_argument("--field", action="append", required=True)
    p.add_argument("--train", action="append", default=None, help="fields for learning transitions")
    p.add_argument("--hide-rows", type=int, default=0, help="withhold labels of the first K rows")
    p = add("complexity", cmd_complexity, "Local statistical complexity per vertex class.")
    p.add_argument("--states", required=True)
    p.add_argument("--field", action="append", required=True)
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p = add("markov-test", cmd_markov_test, "Temporal Markov / Markov-field diagnostics.")
    p.add_argument("--states", required=True)
    p.add_argument("--field", action="append", required=True)
    p.add_argument("--kind", choices=("temporal", "field"), default="temporal")
    p.add_argument("--lag", type=int, default=2, help="probe lag in time steps")
    p.add_argument("--distance", type=int, default=2, help="probe distance for --kind field")
    p.add_argument("--threshold", type=float, default=0.05, help="CMI threshold in bits")
    p = add("pipeline", cmd_pipeline, "simulate -> reconstruct -> evaluate in one go.")
    _sim_flags(p)
    _cone_flags(p)
    _test_flags(p)
    p.add_argument("--outdir", required=True)
    p.add_argument("--mode", choices=("full", "marginal"), default="marginal")
    return parser


def _apply_config(parser, argv) -> argparse.Namespace:
    """Parse ``argv``; a ``--config`` file supplies defaults that flags override."""
    pre = argparse.ArgumentParser(add_help=False, allow_abbrev=False)
    pre.add_argument("--config")
    found, _ = pre.parse_known_args(argv)
    subs = parser._subparsers._group_actions[0].choices if parser._subparsers else {}
    command = next((a for a in argv if a in subs), None)
    if found.config and command:
        sub = subs[command]
        known = {a.dest: a for a in sub._actions}
        defaults = {}
        for k, v in read_config(found.config).items():
            if k not in known or k in ("config", "help"):
                raise UsageError(f"{found.config}: unknown key {k!r}")
            act = known[k]
            if isinstance(act, argparse._AppendAction):
                defaults[k] = [x.strip() for x in v.split(",")]
            elif isinstance(act, (argparse._StoreTrueAction, argparse.BooleanOptionalAction)):
                defaults[k] = v.lower() in ("1", "true", "yes", "on")
            elif act.type is not None:
                defaults[k] = act.type(v)
            else:
                defaults[k] = v
            act.required = False
        sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = _apply_config(parser, argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"conefield: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"conefield: {exc}", file=sys.stderr)
        return 1
    if args.version:
        if args.json:
            print(json.dumps({"name": "conefield", "version": __version__}))
        else:
            print(f"conefield {__version__}")
        return 0
    if not args.command:
        parser.print_usage(sys.stderr)
        return 2
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"conefield: {exc}", file=sys.stderr)
        return 2
    except DATA_ERRORS as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"conefield: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
