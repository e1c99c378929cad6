"""Command line interface: ``crtwin {analyze,estimand,truth,simulate}``."""

from __future__ import annotations

import argparse
import ast
import json
import math
import operator
import sys
from fractions import Fraction
from pathlib import Path

from . import __version__
from .data import ESTIMANDS, ClusterPair, Custom, IndividualPair, WinSummary, WinTriple, read_dataset, summarize
from .dgp import PRESET_DIR, DgpConfig, load_config
from .errors import InferenceError, ParseError, ValidationError
from .estimators import PairTable
from .jackknife import jackknife_table
from .oracle import (
    as_fraction,
    collapse_check,
    estimand_triple,
    load_spec,
    marginals,
    win_triple_from_marginals,
)
from .quadrature import DEFAULT_NODES, true_triples
from .simulation import run_consistency, run_study

EXIT_OK = 0
EXIT_PARSE = 3
EXIT_VALIDATION = 4
EXIT_INFERENCE = 5


# ---------------------------------------------------------------------------
# custom weight expressions
# ---------------------------------------------------------------------------

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul, ast.Div: operator.truediv,
           ast.Pow: operator.pow}
_FUNCS = {"sqrt": math.sqrt, "log": math.log, "exp": math.exp, "min": min, "max": max}


def compile_weight(expr: str):
    """Turn e.g. ``"sqrt(ni*nj)"`` into ``f(ni, nj)``; only arithmetic and a few functions are allowed."""
    try:
        tree = ast.parse(expr, mode="eval")
    except SyntaxError as exc:
        raise ValidationError(f"bad weight expression {expr!r}: {exc.msg}") from None

    def ev(node, env):
        if isinstance(node, ast.Expression):
            return ev(node.body, env)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return node.value
        if isinstance(node, ast.Name) and node.id in env:
            return env[node.id]
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            a, b = ev(node.left, env), ev(node.right, env)
            if isinstance(node.op, ast.Div) and isinstance(a, int) and isinstance(b, int):
                return Fraction(a, b)
            return _BINOPS[type(node.op)](a, b)
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, ast.USub):
            return -ev(node.operand, env)
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _FUNCS:
            return _FUNCS[node.func.id](*(ev(a, env) for a in node.args))
        raise ValidationError(f"unsupported element in weight expression {expr!r}: {ast.dump(node)[:40]}")

    ev(tree, {"ni": 1, "nj": 1})  # reject bad syntax before any data is touched
    return lambda ni, nj: ev(tree, {"ni": ni, "nj": nj})


def parse_scheme(text: str):
    if text == "individual-pair":
        return IndividualPair()
    if text == "cluster-pair":
        return ClusterPair()
    if text.startswith("custom:"):
        expr = text[len("custom:"):]
        return Custom(compile_weight(expr), name=f"custom:{expr}")
    raise ValidationError(f"unknown scheme {text!r}; use individual-pair, cluster-pair or custom:<expr>")


# ---------------------------------------------------------------------------
# formatting
# ---------------------------------------------------------------------------


def _num(x, rational: bool):
    if isinstance(x, float) and math.isinf(x):
        return "inf"
    if rational and isinstance(x, (int, Fraction)):
        return str(Fraction(x))
    return f"{float(x):.6f}"


def _json_num(x, rational: bool):
    if isinstance(x, float) and not math.isfinite(x):
        return None if math.isnan(x) else "inf"
    if rational and isinstance(x, (int, Fraction)):
        return str(Fraction(x))
    return float(x)


def _decimal(x: Fraction) -> str | None:
    """Terminating decimal form of ``x``, if there is one."""
    d = x.denominator
    for p in (2, 5):
        while d % p == 0:
            d //= p
    if d != 1:
        return None
    if x.denominator == 1:
        return str(x.numerator)
    places = 0
    while (x * 10 ** places).denominator != 1:
        places += 1
    return f"{float(x):.{places}f}"


def scaled_fraction(value: Fraction, total: Fraction) -> str | None:
    """``value`` written over ``total**2``, e.g. ``737725/1537600``."""
    den = total * total
    if den.denominator != 1:
        return None
    num = _decimal(Fraction(value) * den)
    return None if num is None else f"{num}/{den.numerator}"


def _emit(records: list[dict], fmt: str, table: str, out) -> None:
    if fmt == "records":
        for r in records:
            out.write(json.dumps(r, sort_keys=True) + "\n")
    else:
        out.write(table)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_analyze(args, out) -> int:
    levels = args.levels.split(",") if args.levels else None
    dataset = read_dataset(args.data, levels=levels)
    scheme = parse_scheme(args.scheme)
    estimands = [e.strip().upper() for e in args.estimand.split(",")]
    for e in estimands:
        if e not in ESTIMANDS:
            raise ValidationError(f"unknown estimand {e!r}; choose from {ESTIMANDS}")
    table = PairTable.from_dataset(dataset, scheme, exact=args.rational)
    triple = table.triple()
    summary = summarize(triple)
    counts = dataset.arm_counts
    base = {"scheme": scheme.name, "M": dataset.M, "treated_clusters": counts[1], "control_clusters": counts[0],
            "levels": list(dataset.scale.levels), "version": __version__}
    r = args.rational
    records = [dict(base, record="triple", win=_json_num(triple.win, r), loss=_json_num(triple.loss, r),
                    tie=_json_num(triple.tie, r))]
    lines = [
        f"scheme: {scheme.name}   M = {dataset.M} ({counts[1]} treated, {counts[0]} control)",
        f"levels (worst to best): {', '.join(dataset.scale.levels)}",
        f"win = {_num(triple.win, r)}  loss = {_num(triple.loss, r)}  tie = {_num(triple.tie, r)}",
    ]
    inference_error = None
    try:
        jk = jackknife_table(table, estimands, args.level, args.df, args.ci_scale)
    except InferenceError as exc:
        jk = {}
        inference_error = exc
    lines.append(f"{'estimand':<8} {'estimate':>12} {'SE':>10} {'lower':>10} {'upper':>10}")
    for e in estimands:
        est = summary.get(e)
        rec = dict(base, record="estimate", estimand=e, estimate=_json_num(est, r))
        if e in jk:
            res = jk[e]
            lo, hi = res.confidence_interval
            rec.update(se=_json_num(res.standard_error, False), lower=_json_num(lo, False),
                       upper=_json_num(hi, False), level=args.level, df=res.df, df_rule=res.df_rule,
                       ci_scale=res.scale, flags=res.flags)
            lines.append(f"{e:<8} {_num(est, r):>12} {res.standard_error:10.6f} {lo:10.6f} {hi:10.6f}"
                         + (f"  [{', '.join(res.flags)}]" if res.flags else ""))
        else:
            lines.append(f"{e:<8} {_num(est, r):>12}")
        records.append(rec)
    if jk:
        any_res = next(iter(jk.values()))
        lines.append(f"jackknife: {100 * args.level:g}% CI, t with df = {any_res.df} ({args.df}), "
                     f"scale = {args.ci_scale}")
    if inference_error is not None:
        lines.append(f"inference refused: {inference_error}")
        records.append(dict(base, record="error", error=type(inference_error).__name__,
                            message=str(inference_error)))
    _emit(records, args.format, "\n".join(lines) + "\n", out)
    return EXIT_INFERENCE if inference_error is not None else EXIT_OK


def _weightings(text: str):
    if text == "both":
        return ["individual", "cluster"]
    if text in ("individual", "cluster"):
        return [text]
    if text.startswith("custom:"):
        return [text]
    raise ValidationError(f"unknown weighting {text!r}")


def cmd_estimand(args, out) -> int:
    spec = load_spec(args.spec)
    r = args.rational
    records = []
    lines = [f"spec: {spec.name}   types: {len(spec.types)}   levels (worst to best): {', '.join(spec.scale.levels)}"]
    pmin = min(t.probability for t in spec.types)
    for w in _weightings(args.weighting):
        if w.startswith("custom:"):
            scheme = parse_scheme(w)
            triple = estimand_triple(spec, scheme)
            marg = None
        else:
            marg = marginals(spec, w)
            triple = win_triple_from_marginals(marg)
        if not r:
            triple = triple.as_float()
        summary = summarize(triple)
        rec = {"record": "estimand", "spec": spec.name, "weighting": w, "version": __version__,
               "win": _json_num(triple.win, r), "loss": _json_num(triple.loss, r), "tie": _json_num(triple.tie, r),
               **{k: _json_num(v, False) for k, v in summary.as_dict().items()}}
        lines.append(f"[{w}]")
        if marg is not None:
            rec["treated_marginal"] = [_json_num(x, r) for x in marg.treated]
            rec["control_marginal"] = [_json_num(x, r) for x in marg.control]
            lines.append("  treated marginal: " + " ".join(_num(x, r) for x in marg.treated))
            lines.append("  control marginal: " + " ".join(_num(x, r) for x in marg.control))
        for key in ("win", "loss", "tie"):
            val = getattr(triple, key)
            text = f"  {key:<5} {_num(val, r)}"
            if r and marg is not None:
                # same probability over (sum of per-type weights)^2, one cluster per least likely type
                f = (lambda n: n) if w == "individual" else (lambda n: 1)
                total = sum(t.probability / pmin * t.expected(f) for t in spec.types)
                scaled = scaled_fraction(val, as_fraction(total))
                if scaled:
                    text += f"  = {scaled}"
                    rec[f"{key}_scaled"] = scaled
            lines.append(text)
        lines.append("  " + "  ".join(f"{k} = {float(v):.6f}" if math.isfinite(float(v)) else f"{k} = inf"
                                      for k, v in summary.as_dict().items()))
        records.append(rec)
    if args.weighting == "both":
        rep = collapse_check(spec)
        lines.append(f"informative cluster size: {rep.ics}; estimands equal: {rep.estimands_equal}")
        records.append({"record": "collapse_check", "spec": spec.name, "ics": rep.ics,
                        "sizes_equal": rep.sizes_equal, "estimands_equal": rep.estimands_equal})
    _emit(records, args.format, "\n".join(lines) + "\n", out)
    return EXIT_OK


def _config(args) -> DgpConfig:
    path = Path(args.config)
    if not path.exists() and (PRESET_DIR / f"{args.config}.toml").exists():
        path = PRESET_DIR / f"{args.config}.toml"
    cfg = load_config(path)
    changes = {}
    for attr, key in (("gamma", "gamma"), ("gamma_link", "gamma_link"), ("seed", "seed"),
                      ("replicates", "replicates"), ("clusters", "clusters")):
        val = getattr(args, attr, None)
        if val is not None:
            changes[key] = val
    return cfg.with_(**changes) if changes else cfg


def _truth_records(cfg: DgpConfig, triples: dict[str, WinTriple]) -> list[dict]:
    out = []
    for lvl, tr in triples.items():
        s = summarize(tr)
        for name in ESTIMANDS:
            out.append({"record": "truth", "scenario": cfg.name, "level": lvl, "estimand": name,
                        "truth": float(s.get(name)), "win": tr.win, "loss": tr.loss, "tie": tr.tie,
                        "gamma": cfg.gamma, "gamma_link": cfg.gamma_link, "config_digest": cfg.digest(),
                        "version": __version__})
    return out


def cmd_truth(args, out) -> int:
    cfg = _config(args)
    triples = true_triples(cfg, args.nodes)
    records = _truth_records(cfg, triples)
    lines = [f"scenario={cfg.name} gamma={cfg.gamma} link={cfg.gamma_link} nodes={args.nodes} config={cfg.digest()}",
             f"{'estimand':<8} {'individual':>12} {'cluster':>12}"]
    sums = {lvl: summarize(tr) for lvl, tr in triples.items()}
    for name in ESTIMANDS:
        lines.append(f"{name:<8} {float(sums['individual'].get(name)):12.6f} {float(sums['cluster'].get(name)):12.6f}")
    _emit(records, args.format, "\n".join(lines) + "\n", out)
    return EXIT_OK


def _load_truth(source: str, cfg: DgpConfig) -> dict[str, WinSummary]:
    if source == "quadrature":
        return {lvl: summarize(tr) for lvl, tr in true_triples(cfg).items()}
    path = Path(source)
    triples = {}
    try:
        for lineno, line in enumerate(path.read_text().splitlines(), start=1):
            if not line.strip():
                continue
            rec = json.loads(line)
            if rec.get("record") == "truth":
                triples[rec["level"]] = WinTriple(rec["win"], rec["loss"], rec["tie"])
            elif rec.get("record") == "estimand":
                lvl = rec.get("weighting")
                if lvl in ("individual", "cluster"):
                    triples[lvl] = WinTriple(*(float(as_fraction(rec[k])) for k in ("win", "loss", "tie")))
    except OSError as exc:
        raise ParseError(str(exc), path=path) from exc
    except (json.JSONDecodeError, KeyError, ValueError) as exc:
        raise ParseError(f"bad truth record: {exc}", line=lineno, path=path) from exc
    missing = {"individual", "cluster"} - set(triples)
    if missing:
        raise ParseError(f"truth file lacks levels {sorted(missing)}", path=path)
    return {lvl: summarize(tr) for lvl, tr in triples.items()}


def cmd_simulate(args, out) -> int:
    cfg = _config(args)
    truth = _load_truth(args.truth, cfg)
    if args.consistency:
        report = run_consistency(cfg, truth, clusters=args.clusters)
    else:
        report = run_study(cfg, truth, level=args.level, df_rule=args.df, scale=args.ci_scale,
                           workers=args.threads)
    report.metadata["truth_source"] = args.truth
    text = report.to_records() if args.format == "records" else report.to_table()
    if args.output:
        Path(args.output).write_text(text)
    else:
        out.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="crtwin", description=__doc__)
    p.add_argument("--version", action="version", version=f"crtwin {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, inference=False):
        sp.add_argument("--format", choices=("table", "records"), default="table")
        if inference:
            sp.add_argument("--level", type=float, default=0.95, help="confidence level")
            sp.add_argument("--df", choices=("m-2", "m-1"), default="m-2", help="t degrees of freedom rule")
            sp.add_argument("--ci-scale", choices=("natural", "log"), default="natural",
                            help="build WR/WO intervals on the natural or log scale")

    a = sub.add_parser("analyze", help="estimate win statistics with jackknife CIs from a data file")
    a.add_argument("data", help="delimited file with columns cluster_id, arm, outcome")
    a.add_argument("--scheme", default="individual-pair",
                   help="individual-pair | cluster-pair | custom:<expr in ni, nj>")
    a.add_argument("--estimand", default="WR,WO,WD", help="comma list of WR, WO, WD")
    a.add_argument("--levels", help="outcome labels, least preferred first, comma separated")
    a.add_argument("--rational", action="store_true", help="exact rational arithmetic")
    common(a, inference=True)

    e = sub.add_parser("estimand", help="exact estimands from a cluster-type spec file")
    e.add_argument("spec")
    e.add_argument("--weighting", default="both", help="individual | cluster | both | custom:<expr>")
    e.add_argument("--rational", action="store_true", help="print exact fractions")
    common(e)

    t = sub.add_parser("truth", help="true estimands for a simulation config by quadrature")
    t.add_argument("config", help="config file or preset name (no_ics, ics)")
    t.add_argument("--gamma", type=float)
    t.add_argument("--gamma-link")
    t.add_argument("--nodes", type=int, default=DEFAULT_NODES)
    common(t)

    s = sub.add_parser("simulate", help="Monte Carlo bias and coverage study")
    s.add_argument("config", help="config file or preset name (no_ics, ics)")
    s.add_argument("--truth", default="quadrature", help="'quadrature' or a file of truth/estimand records")
    s.add_argument("--seed", type=int)
    s.add_argument("--replicates", type=int)
    s.add_argument("--gamma", type=float)
    s.add_argument("--gamma-link")
    s.add_argument("--threads", type=int, default=1, help="worker processes")
    s.add_argument("--consistency", action="store_true", help="single large replicate instead of a study")
    s.add_argument("--clusters", type=int, help="override the number of clusters")
    s.add_argument("--output", help="write the report here instead of stdout")
    common(s, inference=True)
    return p


COMMANDS = {"analyze": cmd_analyze, "estimand": cmd_estimand, "truth": cmd_truth, "simulate": cmd_simulate}


def main(argv=None, out=None) -> int:
    out = sys.stdout if out is None else out
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args, out)
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except ValidationError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except InferenceError as exc:
        print(f"inference error: {exc}", file=sys.stderr)
        return EXIT_INFERENCE


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
