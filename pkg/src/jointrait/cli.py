"""Command line interface: simulate | fit | predict | evaluate | serve.

Progress goes to stderr; machine-readable artifacts go to files (or
stdout for predict/evaluate without --out).  Data and schema problems
exit with code 1 and name the offending field; usage errors exit 2.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import data_io
from .errors import JointraitError

STORE_ENV = "JOINTRAIT_STORE"


def _log(message: str) -> None:
    print(message, file=sys.stderr)


def _dump_json(payload: dict, out: str | None) -> None:
    text = json.dumps(payload, sort_keys=True, indent=2) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_simulate(args) -> int:
    from .simulate import SimScenario, default_spec, generate_dataset

    scenario = SimScenario(n_subjects=args.n, seed=args.seed)
    dataset, truths = generate_dataset(scenario)
    outdir = Path(args.out)
    data_io.write_dataset(dataset, outdir)
    data_io.write_ground_truth(truths, outdir / data_io.GROUND_TRUTH_JSON)
    data_io.write_spec(default_spec(args.association), outdir / data_io.MODEL_SPEC_JSON)
    events = sum(s.event for s in dataset)
    _log(f"simulated {len(dataset)} subjects ({events} events) into {outdir}")
    return 0


def cmd_fit(args) -> int:
    from .archive import save_archive
    from .inference import ChainConfig, PriorSpec, fit

    spec = data_io.read_spec(args.spec)
    dataset = data_io.read_dataset(args.data)
    fixed = {}
    for item in args.fix or []:
        name, _, value = item.partition("=")
        if not value:
            raise JointraitError(f"--fix expects name=value, got '{item}'")
        fixed[name] = float(value)
    config = ChainConfig(
        n_chains=args.chains,
        n_iter=args.iter,
        n_burnin=args.burnin,
        seed=args.seed,
        thinning=args.thin,
        fixed_params=fixed,
    )
    _log(f"fitting {len(dataset)} subjects: {args.chains} chains x {args.iter} iterations")
    archive = fit(dataset, spec, PriorSpec(), config)
    save_archive(archive, args.out)
    diag = archive.diagnostics
    _log(
        f"saved {archive.n_draws} draws to {args.out} | "
        f"max R-hat {diag['max_rhat_parameters']:.3f} (parameters), "
        f"{diag['max_rhat_effects']:.3f} (random effects)"
    )
    return 0


def cmd_predict(args) -> int:
    from .archive import load_archive
    from .prediction import PredictionRequest, predict

    archive = load_archive(args.model)
    covariates, visits = data_io.read_subject(args.subject)
    horizons = tuple(float(h) for h in args.horizons.split(","))
    request = PredictionRequest(
        covariates=covariates,
        visits=visits,
        landmark=args.landmark,
        horizons=horizons,
        m_use=args.draws,
        seed=args.seed,
    )
    result = predict(request, archive)
    payload = data_io.prediction_payload(Path(args.model).stem, request, result)
    _dump_json(payload, args.out)
    return 0


def cmd_evaluate(args) -> int:
    from .evaluation import EvalConfig, brier, roc_auc

    records = data_io.read_eval_records(args.predictions)
    config = EvalConfig(
        landmark=args.landmark,
        horizon=args.horizon,
        bandwidth=args.bandwidth,
        grid_size=args.grid,
        censoring_km=args.censoring_km,
    )
    roc = roc_auc(records, config)
    bs = brier(records, config)
    payload = {
        "landmark": config.landmark,
        "horizon": config.horizon,
        "auc": None if not roc.defined else roc.auc,
        "auc_defined": roc.defined,
        "bs": bs,
        "n_cases": roc.n_cases,
        "n_controls": roc.n_controls,
        "roc_points": [
            {"cutpoint": float(c), "sensitivity": float(se), "specificity": float(sp)}
            for c, se, sp in zip(roc.cutpoints, roc.sensitivity, roc.specificity)
        ],
    }
    _dump_json(payload, args.out)
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .archive import ArchiveStore
    from .service import create_app

    store_dir = args.store or os.environ.get(STORE_ENV)
    if not store_dir:
        raise JointraitError(f"no archive store: pass --store or set {STORE_ENV}")
    store = ArchiveStore(store_dir)
    if not store.ids():
        raise JointraitError(f"archive store '{store_dir}' holds no .jma archives")
    app = create_app(store, ui_dir=args.ui)
    _log(f"serving {len(store.ids())} archive(s) from {store_dir} on {args.bind}:{args.port}")
    uvicorn.run(app, host=args.bind, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jointrait", description="Joint latent-trait modeling toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    p.add_argument("--n", type=int, default=800)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--association", default="M1", choices=["M1", "M2", "M3"])
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit the joint model by MCMC")
    p.add_argument("--data", required=True, help="directory with the dataset CSVs")
    p.add_argument("--spec", required=True, help="model spec JSON")
    p.add_argument("--chains", type=int, default=2)
    p.add_argument("--iter", type=int, default=2000)
    p.add_argument("--burnin", type=int, default=1000)
    p.add_argument("--thin", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fix", action="append", metavar="NAME=VALUE", help="pin a parameter")
    p.add_argument("--out", required=True, help="output .jma archive")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="dynamic prediction for one subject")
    p.add_argument("--model", required=True, help=".jma archive")
    p.add_argument("--subject", required=True, help="subject JSON (covariates + visits)")
    p.add_argument("--landmark", type=float, required=True)
    p.add_argument("--horizons", required=True, help="comma-separated future times")
    p.add_argument("--draws", type=int, default=None, help="number of posterior draws to use")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="output JSON (default: stdout)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="censoring-aware AUC and Brier score")
    p.add_argument("--predictions", required=True, help="CSV with id,risk,time,event")
    p.add_argument("--landmark", type=float, required=True)
    p.add_argument("--horizon", type=float, required=True)
    p.add_argument("--bandwidth", type=float, default=0.10)
    p.add_argument("--grid", type=int, default=201)
    p.add_argument("--censoring-km", default="censoring", choices=["censoring", "event"])
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("serve", help="HTTP prediction service over an archive store")
    p.add_argument("--store", default=None, help=f"directory of .jma files (default ${STORE_ENV})")
    p.add_argument("--bind", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--ui", default=None, help="static UI bundle directory to serve at /")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except JointraitError as err:
        _log(f"error: {err}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
