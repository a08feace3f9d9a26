"""Command-line front end.

Subcommands::

    ingest       validate an exposure CSV; write canonical exposures and transitions
    similarity   scenario similarity matrix (and optional top pairs)
    weights      stabilized weights, diagnostics and histogram
    estimate     one model: coefficients, APEs, fit statistics
    progression  the estimator ladder for one outcome
    suite        one family of interaction models with joint Wald tests
    simulate     synthetic panel plus oracle truth
    diagnose     weight diagnostics, history balance and raw transition rates

Every subcommand writes into ``--out-dir`` and prints the paths it wrote.
Usage errors exit with status 2, data and estimation errors with status 1
and a one-line JSON message on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import pandas as pd

from . import __version__
from . import dgp as dgp_mod
from . import estimators as est
from .errors import ClickPersistError, ParseError
from .panel import (build_transitions, ingest_exposures, safe_handling_decomposition, transition_rates,
                    write_exposures_csv, write_transitions_csv)
from .pipeline import prepare
from .reporting import Header, file_digest, write_csv, write_json, write_text
from .similarity import published_codes, read_scenario_codes, similarity_matrix, top_pairs
from .weights import DENOMINATOR_HISTORY, history_balance, weight_diagnostics, weight_histogram

LAYER_NAMES = {"cues": "cue", "cue": "cue", "education": "education"}


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# argument parsing

def _add_common(p: argparse.ArgumentParser, panel: bool = True, codes: bool = True):
    if panel:
        p.add_argument("--panel", required=True, help="exposure CSV")
    if codes:
        p.add_argument("--codes", help="scenario-code CSV (default: bundled published codes)")
    p.add_argument("--out-dir", required=True, help="directory for outputs (created if missing)")
    p.add_argument("--seed", type=int, default=0, help="recorded in output headers")


def _add_weight_flags(p: argparse.ArgumentParser):
    p.add_argument("--trim", type=float, nargs=2, default=(1.0, 99.0), metavar=("LOWER", "UPPER"),
                   help="trim percentiles (default 1 99)")
    p.add_argument("--numerator-history", nargs="*", default=[], choices=DENOMINATOR_HISTORY,
                   help="history terms kept in the numerator model (default: none)")


def _add_model_flags(p: argparse.ArgumentParser):
    p.add_argument("--outcome", choices=tuple(est.OUTCOMES), default="click")
    p.add_argument("--mundlak", nargs="+", default=list(est.DEFAULT_MUNDLAK),
                   help="covariates averaged into Mundlak terms")
    p.add_argument("--ape-weighting", choices=("weighted", "unweighted"), default="weighted")
    p.add_argument("--format", choices=("csv", "json", "both"), default="both")


def _dgp_flags(p: argparse.ArgumentParser):
    for f in dataclasses.fields(dgp_mod.DgpConfig):
        if f.name == "seed":
            continue
        flag = "--" + f.name.replace("_", "-")
        if f.name == "scenario_ids":
            p.add_argument(flag, help="comma-separated scenario ids")
        elif f.name == "link":
            p.add_argument(flag, choices=("probit", "logit"))
        elif f.type in ("int", int):
            p.add_argument(flag, type=int)
        else:
            p.add_argument(flag, type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="clickpersist", description="Click persistence estimation toolkit")
    parser.add_argument("--version", action="version", version=f"clickpersist {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate exposures and build transitions")
    _add_common(p)
    p.add_argument("--consecutive-only", action="store_true")

    p = sub.add_parser("similarity", help="scenario similarity matrix")
    _add_common(p, panel=False)
    p.add_argument("--metric", choices=("jaccard", "smc"), default="jaccard")
    p.add_argument("--layer", choices=tuple(LAYER_NAMES), default="cues")
    p.add_argument("--decimals", type=int, default=2)
    p.add_argument("--top", type=int, default=0, help="also write the top-k pairs")

    p = sub.add_parser("weights", help="stabilized IPTW weights")
    _add_common(p)
    _add_weight_flags(p)
    p.add_argument("--bins", type=int, default=50)

    p = sub.add_parser("estimate", help="fit one model")
    _add_common(p)
    _add_weight_flags(p)
    _add_model_flags(p)
    p.add_argument("--kind", choices=est.KINDS, default="msm-cre")
    p.add_argument("--link", choices=("probit", "logit"), default="probit",
                   help="logit is available for msm-probit (giving msm-logit)")
    p.add_argument("--weights", choices=("trimmed", "raw"), default="trimmed")

    p = sub.add_parser("progression", help="estimator ladder")
    _add_common(p)
    _add_weight_flags(p)
    _add_model_flags(p)

    p = sub.add_parser("suite", help="interaction suite")
    _add_common(p)
    _add_weight_flags(p)
    p.add_argument("--suite", choices=est.SUITES, required=True)
    p.add_argument("--kind", choices=("msm-cre", "cre-probit", "msm-probit", "pooled-probit"), default="msm-cre")
    p.add_argument("--mundlak", nargs="+", default=list(est.DEFAULT_MUNDLAK))
    p.add_argument("--ape-weighting", choices=("weighted", "unweighted"), default="weighted")
    p.add_argument("--format", choices=("csv", "json", "both"), default="both")

    p = sub.add_parser("simulate", help="synthetic panel and oracle truth")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--preset", choices=tuple(dgp_mod.PRESETS))
    p.add_argument("--replications", type=int, default=100_000, help="oracle paths (>= 10000)")
    _dgp_flags(p)

    p = sub.add_parser("diagnose", help="weight diagnostics and balance")
    _add_common(p)
    _add_weight_flags(p)
    return parser


# ---------------------------------------------------------------------------
# helpers

def _inputs(args) -> dict:
    """Validate input paths and return their digests."""
    out = {}
    for name in ("panel", "codes"):
        path = getattr(args, name, None)
        if path is None:
            continue
        if not Path(path).is_file():
            raise FileNotFoundError(f"--{name}: no such file: {path}")
        out[name] = file_digest(path)
    return out


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    if out.exists() and not out.is_dir():
        raise UsageError(f"--out-dir exists and is not a directory: {out}")
    return out


def _header(args, inputs: dict) -> Header:
    if args.command == "simulate":
        flags = {"command": args.command, "preset": args.preset, "replications": args.replications,
                 "dgp": _dgp_config(args).to_dict()}
    else:
        flags = {k: v for k, v in sorted(vars(args).items()) if k not in ("out_dir", "panel", "codes")}
    flags["inputs"] = inputs
    return Header(args.command, flags, args.seed)


def _codes(args):
    return published_codes() if getattr(args, "codes", None) is None else read_scenario_codes(args.codes)


def _prepared(args):
    lo, hi = args.trim
    if not 0 <= lo < hi <= 100:
        raise UsageError("--trim needs 0 <= LOWER < UPPER <= 100")
    panel = ingest_exposures(args.panel)
    return prepare(panel, _codes(args), lo, hi, tuple(args.numerator_history))


def _emit(out: Path, stem: str, fmt: str, header: Header, tables: dict, extra: dict | None = None) -> list[Path]:
    paths = []
    if fmt in ("csv", "both"):
        for name, frame in tables.items():
            paths.append(write_csv(out / f"{stem}_{name}.csv", frame, header))
    if fmt in ("json", "both"):
        payload = {name: frame for name, frame in tables.items()}
        payload.update(extra or {})
        paths.append(write_json(out / f"{stem}.json", payload, header))
    return paths


# ---------------------------------------------------------------------------
# subcommands

def cmd_ingest(args, header, out):
    panel = ingest_exposures(args.panel)
    tr = build_transitions(panel, _codes(args), consecutive_only=args.consecutive_only)
    paths = [write_text(out / "exposures.csv", header.csv_lines() + write_exposures_csv(panel)),
             write_text(out / "transitions.csv", header.csv_lines() + write_transitions_csv(tr))]
    safe = safe_handling_decomposition(panel.exposures["clicked"].to_numpy(), panel.exposures["reported"].to_numpy())
    summary = {"panel": panel.summary(), "transitions_written": len(tr), "rates": transition_rates(tr),
               "safe_handling": {k: (str(v) if v is not None and not isinstance(v, int) else v)
                                 for k, v in safe.items()}}
    paths.append(write_json(out / "ingest.json", summary, header))
    return paths


def cmd_similarity(args, header, out):
    codes = _codes(args)
    layer = LAYER_NAMES[args.layer]
    m = similarity_matrix(codes, args.metric, layer)
    paths = [write_text(out / f"similarity_{args.metric}_{layer}.csv", header.csv_lines() + m.to_csv(decimals=args.decimals))]
    if args.top > 0:
        paths.append(write_csv(out / f"top_pairs_{args.metric}_{layer}.csv", top_pairs(m, args.top, codes), header))
    return paths


def cmd_weights(args, header, out):
    p = _prepared(args)
    ws = p.weights
    frame = ws.frame.loc[:, ["employee_id", "t", "treatment", "p_num", "p_den", "ratio", "sw", "sw_trim"]]
    summary = {"lower_cutoff": ws.lower, "upper_cutoff": ws.upper, "capped_low": ws.capped_low,
               "capped_high": ws.capped_high, "rows": len(ws), "dropped_constant_columns": list(p.models.dropped),
               "numerator_columns": list(p.models.numerator_columns),
               "denominator_columns": list(p.models.denominator_columns)}
    return [write_csv(out / "weights.csv", frame, header),
            write_csv(out / "weight_diagnostics.csv", weight_diagnostics(ws), header),
            write_csv(out / "weight_histogram.csv", weight_histogram(ws, "sw", args.bins), header),
            write_json(out / "weights.json", {**summary, "diagnostics": weight_diagnostics(ws)}, header)]


def cmd_estimate(args, header, out):
    kind = args.kind
    if args.link == "logit":
        if kind not in ("msm-probit", "msm-logit"):
            raise UsageError("--link logit is available for --kind msm-probit only")
        kind = "msm-logit"
    p = _prepared(args)
    weight_source = args.weights if kind.startswith("msm") else "none"
    spec = est.ModelSpec(outcome=args.outcome, kind=kind, mundlak=tuple(args.mundlak),
                         ape_weighting=args.ape_weighting, weight_source=weight_source)
    res = est.estimate(spec, p.transitions)
    fit = res.fit_statistics()
    extra = {"fit": fit, "ape_convention": res.ape.convention, "notes": list(res.notes), "kind": kind,
             "outcome": args.outcome}
    tables = {"coefficients": res.coefficient_table(), "ape": res.ape.table,
              "fit": pd.DataFrame([{"statistic": k, "value": v} for k, v in fit.items()])}
    return _emit(out, "estimate", args.format, header, tables, extra)


def cmd_progression(args, header, out):
    p = _prepared(args)
    table = est.progression(p.transitions, args.outcome, mundlak=tuple(args.mundlak),
                            ape_weighting=args.ape_weighting)
    extra = {"outcome": args.outcome, "trim_cutoffs": [p.weights.lower, p.weights.upper]}
    return _emit(out, "progression", args.format, header, {"table": table}, extra)


def cmd_suite(args, header, out):
    p = _prepared(args)
    res = est.interaction_suite(p.transitions, args.suite, args.kind, mundlak=tuple(args.mundlak),
                                ape_weighting=args.ape_weighting)
    tables = {"ape": res.ape_table(), "coefficients": res.coefficient_table(), "wald": res.wald_table()}
    extra = {"suite": args.suite, "notes": list(res.notes), "sample": res.sample}
    return _emit(out, f"suite_{args.suite}", args.format, header, tables, extra)


def _dgp_config(args) -> dgp_mod.DgpConfig:
    overrides = {}
    for f in dataclasses.fields(dgp_mod.DgpConfig):
        if f.name == "seed":
            continue
        v = getattr(args, f.name, None)
        if v is None:
            continue
        overrides[f.name] = tuple(s.strip() for s in v.split(",") if s.strip()) if f.name == "scenario_ids" else v
    overrides["seed"] = args.seed
    if args.preset:
        return dgp_mod.DgpConfig.preset(args.preset, **overrides)
    return dgp_mod.DgpConfig(**overrides)


def cmd_simulate(args, header, out):
    if args.replications < 10_000:
        raise UsageError("--replications must be at least 10000")
    cfg = _dgp_config(args)
    panel = dgp_mod.simulate_panel(cfg)
    truth = dgp_mod.oracle_ape(cfg, args.replications)
    payload = {"config_echo": cfg.to_dict(), "truth": truth.to_dict(), "panel": panel.summary()}
    return [write_text(out / "panel.csv", header.csv_lines() + write_exposures_csv(panel)),
            write_json(out / "truth.json", payload, header)]


def cmd_diagnose(args, header, out):
    p = _prepared(args)
    diag = weight_diagnostics(p.weights)
    balance = history_balance(p.histories, p.weights)
    rates = transition_rates(p.transitions)
    return [write_csv(out / "diagnose_weights.csv", diag, header),
            write_csv(out / "diagnose_balance.csv", balance, header),
            write_csv(out / "diagnose_rates.csv", rates, header),
            write_json(out / "diagnose.json", {"weights": diag, "balance": balance, "rates": rates}, header)]


COMMANDS = {
    "ingest": cmd_ingest,
    "similarity": cmd_similarity,
    "weights": cmd_weights,
    "estimate": cmd_estimate,
    "progression": cmd_progression,
    "suite": cmd_suite,
    "simulate": cmd_simulate,
    "diagnose": cmd_diagnose,
}


def _fail(exc: Exception) -> int:
    msg = {"error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, ParseError) and exc.row is not None:
        msg["row"] = exc.row
    print(json.dumps(msg, sort_keys=True), file=sys.stderr)
    return 1


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        inputs = _inputs(args)
        out = _out_dir(args)
        header = _header(args, inputs)
        out.mkdir(parents=True, exist_ok=True)
        paths = COMMANDS[args.command](args, header, out)
    except UsageError as exc:
        parser.error(str(exc))
    except (ClickPersistError, ValueError, OSError) as exc:
        return _fail(exc)
    for path in paths:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
