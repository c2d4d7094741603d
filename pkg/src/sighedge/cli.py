"""Batch command line: ``sighedge <command> [options]``.

Every command writes its outputs plus a ``manifest.json`` (arguments, input
digests, library versions, seed) into ``--out``.  Failures print a JSON
error record on stderr and exit with a nonzero status.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from . import io as sio
from .errors import DataQualityError, InputError, SigHedgeError
from .hedging import (DelaySpec, HedgeProblem, HedgeSolution, backtest_strategy, solve)
from .implied import extract_discount, implied_expected_signature, predict_prices
from .market import ExpectedSignature, ModelSpec, expected_signature_mc, sample_paths
from .payoffs import KINDS, PayoffSpec, SignaturePayoff, fit_signature_payoff, price_payoff
from .tensor_words import FreeTensor

THREADS_ENV = "SIGHEDGE_THREADS"

EXIT_CODES = {"usage": 2, "input_error": 3, "capacity_error": 4, "numerical_error": 5,
              "data_quality_error": 6, "io": 7, "internal": 10}


class UsageError(Exception):
    pass


def _letters(text: str) -> tuple:
    try:
        letters = tuple(sorted({int(c) for c in text.replace(",", "")}))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"letters must be digits 1-4, got {text!r}") from exc
    if not letters or letters[0] < 1 or letters[-1] > 4:
        raise argparse.ArgumentTypeError("letters must be digits 1-4")
    return letters


def _json_arg(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise argparse.ArgumentTypeError(f"invalid JSON: {exc}") from exc


def _float_list(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers: {text!r}") from exc


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> dict:
    if args.model == "bs":
        model = ModelSpec.black_scholes(args.sigma, args.rate, measure=args.measure, mu=args.mu)
    else:
        kw = {k: getattr(args, k) for k in ("v0", "kappa", "theta", "xi", "rho")
              if getattr(args, k) is not None}
        model = ModelSpec.heston(rate=args.rate, measure=args.measure, mu=args.mu, **kw)
    ens = sample_paths(model, args.T, args.steps, args.paths, args.seed,
                       discounted=args.discounted, x0=args.x0)
    out = args.out / "ensemble.csv"
    sio.write_ensemble_csv(out, ens)
    return {"outputs": [out], "record": {"model": model.to_dict(), "discounted": args.discounted}}


def cmd_expsig(args) -> dict:
    ens = sio.read_ensemble_csv(args.ensemble)
    es = expected_signature_mc(ens, args.order, discount=args.discount, letters=args.letters)
    out = sio.write_json(args.out / "es.json", es.to_dict())
    return {"outputs": [out], "inputs": [args.ensemble]}


def _payoff_spec(args) -> PayoffSpec:
    if args.payoff_json is not None:
        return PayoffSpec.from_dict(sio.read_json(args.payoff_json))
    if args.kind is None:
        raise UsageError("give --kind (with --params) or --payoff-json")
    return PayoffSpec(args.kind, args.params or {})


def cmd_fitpayoff(args) -> dict:
    spec = _payoff_spec(args)
    ens = sio.read_ensemble_csv(args.ensemble)
    sp = fit_signature_payoff(spec, ens, args.order, args.ridge, args.letters)
    out = sio.write_json(args.out / "payoff.json", sp.to_dict())
    return {"outputs": [out], "inputs": [args.ensemble], "record": sp.diagnostics}


def _load_payoff(path) -> SignaturePayoff:
    return SignaturePayoff.from_dict(sio.read_json(path))


def _load_es(path) -> ExpectedSignature:
    return ExpectedSignature.from_dict(sio.read_json(path))


def cmd_hedge(args) -> dict:
    payoff = _load_payoff(args.payoff)
    es = _load_es(args.es)
    risk = args.risk if args.risk is not None else (args.P or [0.0, 0.0, 1.0])
    basket = tuple(_load_payoff(p).f for p in args.basket)
    box = None
    if args.box is not None:
        if len(args.box) != 2 * len(basket):
            raise UsageError("--box needs low,high for every basket payoff")
        box = tuple(zip(args.box[0::2], args.box[1::2]))
    delay = None
    if args.mode == "delayed":
        if args.prefix is None or args.delay_t is None or args.p_t is None:
            raise UsageError("delayed mode needs --prefix, --delay-t and --p-t")
        delay = DelaySpec(args.delay_t, FreeTensor.from_dict(sio.read_json(args.prefix)), args.p_t)
    problem = HedgeProblem(P=risk, f=payoff, p0=args.p0, M=args.M, mode=args.mode,
                           alpha=args.alpha, M_liq=args.M_liq, basket=basket, box=box,
                           delay=delay, truncate=args.truncate)
    sol = solve(problem, es)
    record = sol.to_dict()
    record["problem"] = problem.to_dict()
    out = sio.write_json(args.out / "solution.json", record)
    inputs = [args.payoff, args.es] + list(args.basket) + ([args.prefix] if args.prefix else [])
    return {"outputs": [out], "inputs": inputs,
            "record": {"objective": sol.objective_value, "required_es_order": sol.required_es_order}}


def cmd_backtest(args) -> dict:
    obj = sio.read_json(args.solution)
    if "problem" not in obj:
        raise InputError("solution file lacks the 'problem' record written by 'hedge'")
    problem = HedgeProblem.from_dict(obj["problem"])
    sol = HedgeSolution.from_dict(obj)
    ens = sio.read_ensemble_csv(args.ensemble)
    payoff = _payoff_spec(args) if (args.kind or args.payoff_json) else None
    rep = backtest_strategy(sol, ens, problem, payoff=payoff, growth=args.growth)
    csv_out = args.out / "backtest.csv"
    sio.write_backtest_csv(csv_out, rep)
    summary = rep.summary()
    summary["objective"] = rep.objective(problem.P)
    js = sio.write_json(args.out / "summary.json", summary)
    return {"outputs": [csv_out, js], "inputs": [args.solution, args.ensemble], "record": summary}


def cmd_impliedsig(args) -> dict:
    quotes = sio.read_quotes_csv(args.quotes, args.T)
    ens = sio.read_ensemble_csv(args.ensemble)
    train = quotes.train
    if len(train) == 0:
        raise InputError("no training quotes (split column marks none as 'train')")
    from .payoffs import SignatureRegression
    regression = SignatureRegression(ens, args.order, args.payoff_ridge, args.letters)
    ies = implied_expected_signature(train, None, args.order, reg=args.reg, letters=args.letters,
                                     time_constraints=not args.no_time_constraints,
                                     regression=regression)
    _, r2_train, rep_train = predict_prices(ies, train, regression=regression)
    report = {"train": rep_train, "diagnostics": ies.diagnostics}
    test = quotes.test
    if len(test):
        pred, _, rep_test = predict_prices(ies, test, regression=regression)
        report["test"] = rep_test
        report["test_predictions"] = {q.payoff_id: float(p) for q, p in zip(test.quotes, pred)}
    try:
        report["discount"] = extract_discount(ies, args.T)
    except DataQualityError as exc:
        report["discount"] = {"error": str(exc)}
    out_es = sio.write_json(args.out / "implied_es.json", ies.to_dict())
    out_rep = sio.write_json(args.out / "report.json", report)
    return {"outputs": [out_es, out_rep], "inputs": [args.quotes, args.ensemble], "record": report}


def cmd_price(args) -> dict:
    payoff = _load_payoff(args.payoff)
    es = _load_es(args.es)
    value = price_payoff(payoff, es)
    print(repr(value))
    out = sio.write_json(args.out / "price.json", {"price": value, "standard_error": es.pair_se(payoff.f)})
    return {"outputs": [out], "inputs": [args.payoff, args.es], "record": {"price": value}}


def cmd_experiment(args) -> dict:
    from . import experiments as ex
    name = args.name
    if name == "toy":
        res = ex.toy_black_scholes(n_es=args.paths)
        summary = res.summary()
    elif name == "heston-hedge":
        summary = ex.heston_hedging(n_es=args.paths).summary()
    elif name == "implied":
        res = ex.implied_replica(n_quote_paths=args.paths)
        summary = res.summary()
        sio.write_quotes_csv(args.out / "quotes.csv", res.quotes)
    elif name == "costs":
        toy_es = ex.toy_black_scholes(n_es=args.paths, n_test=2).es
        summary = ex.transaction_costs(toy_es).summary()
    else:  # pragma: no cover - argparse restricts the choices
        raise UsageError(f"unknown experiment {name!r}")
    out = sio.write_json(args.out / f"experiment_{name}.json", summary)
    return {"outputs": [out], "record": summary}


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", type=Path, default=Path("."), help="output directory")
    common.add_argument("--threads", type=int, default=None,
                        help=f"worker cap (default from ${THREADS_ENV}, else 1)")

    p = argparse.ArgumentParser(prog="sighedge", description="Signature pricing and hedging.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="simulate a price ensemble")
    s.add_argument("--model", choices=("bs", "heston"), default="bs")
    s.add_argument("--sigma", type=float, default=0.2)
    s.add_argument("--rate", type=float, default=0.0)
    s.add_argument("--mu", type=float, default=0.0, help="drift under the objective measure")
    s.add_argument("--measure", choices=("risk_neutral", "objective"), default="risk_neutral")
    for name in ("v0", "kappa", "theta", "xi", "rho"):
        s.add_argument(f"--{name}", type=float, default=None, help="Heston parameter")
    s.add_argument("--T", type=float, default=1.0)
    s.add_argument("--steps", type=int, default=252)
    s.add_argument("--paths", type=int, default=1000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--x0", type=float, default=1.0)
    s.add_argument("--discounted", action="store_true", help="write discounted prices")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("expsig", parents=[common], help="Monte Carlo expected signature")
    s.add_argument("--ensemble", type=Path, required=True)
    s.add_argument("--order", type=int, required=True)
    s.add_argument("--discount", type=float, default=None, help="discount at this rate")
    s.add_argument("--letters", type=_letters, default=(1, 2, 3, 4))
    s.set_defaults(func=cmd_expsig)

    s = sub.add_parser("fitpayoff", parents=[common], help="project a payoff on signatures")
    s.add_argument("--kind", choices=KINDS)
    s.add_argument("--params", type=_json_arg, default=None, help="payoff parameters as JSON")
    s.add_argument("--payoff-json", type=Path, default=None, help="PayoffSpec JSON file")
    s.add_argument("--ensemble", type=Path, required=True)
    s.add_argument("--order", type=int, required=True)
    s.add_argument("--ridge", type=float, default=1e-8)
    s.add_argument("--letters", type=_letters, default=(1, 2, 3, 4))
    s.set_defaults(func=cmd_fitpayoff)

    s = sub.add_parser("hedge", parents=[common], help="solve a signature hedging problem")
    s.add_argument("--payoff", type=Path, required=True, help="SignaturePayoff JSON")
    s.add_argument("--es", type=Path, required=True, help="ExpectedSignature JSON")
    s.add_argument("--P", type=_float_list, default=None, help="risk coefficients a0,a1,...")
    s.add_argument("--risk", type=_json_arg, default=None,
                   help='risk record, e.g. {"kind": "exponential", "lam": 0.25, "degree": 6}')
    s.add_argument("--p0", type=float, default=None)
    s.add_argument("--M", type=int, default=2)
    s.add_argument("--mode", choices=("plain", "fixed_cost", "prop_cost", "liquidity",
                                      "semistatic", "delayed"), default="plain")
    s.add_argument("--alpha", type=float, default=0.0)
    s.add_argument("--M-liq", dest="M_liq", type=float, default=math.inf)
    s.add_argument("--basket", type=Path, nargs="*", default=[])
    s.add_argument("--box", type=_float_list, default=None, help="low1,high1,low2,high2,...")
    s.add_argument("--prefix", type=Path, default=None, help="prefix signature JSON")
    s.add_argument("--delay-t", dest="delay_t", type=float, default=None)
    s.add_argument("--p-t", dest="p_t", type=float, default=None)
    s.add_argument("--truncate", action="store_true",
                   help="drop shuffle terms above the expected-signature order")
    s.set_defaults(func=cmd_hedge)

    s = sub.add_parser("backtest", parents=[common], help="run a hedge over test paths")
    s.add_argument("--solution", type=Path, required=True)
    s.add_argument("--ensemble", type=Path, required=True)
    s.add_argument("--kind", choices=KINDS, default=None, help="realized payoff (default: the hedged one)")
    s.add_argument("--params", type=_json_arg, default=None)
    s.add_argument("--payoff-json", type=Path, default=None)
    s.add_argument("--growth", type=float, default=1.0)
    s.set_defaults(func=cmd_backtest)

    s = sub.add_parser("impliedsig", parents=[common], help="implied expected signature")
    s.add_argument("--quotes", type=Path, required=True)
    s.add_argument("--ensemble", type=Path, required=True)
    s.add_argument("--order", type=int, default=5)
    s.add_argument("--T", type=float, default=1.0)
    s.add_argument("--reg", type=float, default=1e-10)
    s.add_argument("--payoff-ridge", dest="payoff_ridge", type=float, default=1e-8)
    s.add_argument("--letters", type=_letters, default=(1, 2, 3, 4))
    s.add_argument("--no-time-constraints", action="store_true")
    s.set_defaults(func=cmd_impliedsig)

    s = sub.add_parser("price", parents=[common], help="price a signature payoff")
    s.add_argument("--payoff", type=Path, required=True)
    s.add_argument("--es", type=Path, required=True)
    s.set_defaults(func=cmd_price)

    s = sub.add_parser("experiment", parents=[common], help="run a synthetic experiment")
    s.add_argument("name", choices=("toy", "heston-hedge", "implied", "costs"))
    s.add_argument("--paths", type=int, default=100_000, help="main ensemble size")
    s.set_defaults(func=cmd_experiment)
    return p


def _set_threads(requested: int | None) -> int:
    n = requested
    if n is None:
        env = os.environ.get(THREADS_ENV)
        n = int(env) if env and env.isdigit() else 1
    n = max(1, n)
    try:
        import numba
        with warnings.catch_warnings():
            # numba complains about an old TBB while picking a threading layer
            warnings.simplefilter("ignore")
            numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
    except (ImportError, ValueError):
        pass
    return n


def _versions() -> dict:
    import numba
    import scipy
    return {"sighedge": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "numba": numba.__version__, "python": sys.version.split()[0]}


def _error_kind(exc: BaseException) -> str:
    if isinstance(exc, UsageError):
        return "usage"
    if isinstance(exc, SigHedgeError):
        return exc.kind
    if isinstance(exc, (FileNotFoundError, PermissionError, IsADirectoryError)):
        return "io"
    return "internal"


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if exc.code not in (0, None):
            sys.stderr.write(sio.dumps({"error": "usage", "message": "invalid arguments",
                                        "argv": argv}, indent=None))
        return int(exc.code or 0)
    try:
        threads = _set_threads(args.threads)
        args.out.mkdir(parents=True, exist_ok=True)
        result = args.func(args)
    except Exception as exc:  # noqa: BLE001 - every failure becomes an error record
        kind = _error_kind(exc)
        sys.stderr.write(sio.dumps({"error": kind, "type": type(exc).__name__,
                                    "message": str(exc), "command": args.command}, indent=None))
        return EXIT_CODES.get(kind, EXIT_CODES["internal"])
    params = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items()
              if k not in ("func", "out", "threads")}
    manifest = {"command": args.command, "arguments": params, "threads": threads,
                "seed": params.get("seed"), "versions": _versions(),
                "inputs": {str(p): sio.file_digest(p) for p in result.get("inputs", [])},
                "outputs": sorted(Path(p).name for p in result.get("outputs", []))}
    if "record" in result:
        manifest["result"] = result["record"]
    sio.write_json(args.out / "manifest.json", manifest)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
