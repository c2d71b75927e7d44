"""Batch command-line interface.

::

    mvgp fit <data> <config> -o <model>
    mvgp predict <model> <grid> -o <raster>
    mvgp cv <data> <config> --mode {loo,kfold} [--folds <labels>]
    mvgp scenario <model> <scenario-data> --predict-species <list>
    mvgp simulate <kind> --seed N -o <data>

Failures print one JSON line ``{"error": ..., "message": ...}`` to stderr
and exit with status 1 (2 for usage errors).
"""

import argparse
import json
import os
import sys

import numpy as np
from threadpoolctl import threadpool_limits

from .errors import MVGPError, SchemaError


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(json.dumps({"error": "UsageError", "message": message}) + "\n")
        sys.exit(2)


def _parser():
    p = _Parser(prog="mvgp", description="Multivariate additive GP models with Laplace inference.")
    p.add_argument("--deterministic", action="store_true",
                   help="single-threaded numerics for bitwise reproducibility")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    f = sub.add_parser("fit", help="estimate hyperparameters and save a model file")
    f.add_argument("data")
    f.add_argument("config")
    f.add_argument("-o", "--output", required=True)
    f.add_argument("--variant", type=int, choices=range(1, 10))
    f.add_argument("--max-iter", type=int)
    f.add_argument("--restarts", type=int)
    f.add_argument("--deterministic", action="store_true", default=argparse.SUPPRESS)

    q = sub.add_parser("predict", help="predict on a grid")
    q.add_argument("model")
    q.add_argument("grid")
    q.add_argument("-o", "--output", required=True)
    q.add_argument("--species", help="comma separated species (default all)")
    q.add_argument("--samples", type=int, default=2000)
    q.add_argument("--z", type=float, default=1.0, help="trials or effort of a new observation")
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--deterministic", action="store_true", default=argparse.SUPPRESS)

    c = sub.add_parser("cv", help="cross-validation")
    c.add_argument("data")
    c.add_argument("config")
    c.add_argument("--mode", choices=("loo", "kfold"), required=True)
    c.add_argument("--folds", help="CSV with columns site_id,region (structured folds)")
    c.add_argument("--k", type=int, default=5, help="number of random folds without --folds")
    c.add_argument("--no-refit", action="store_true", help="K-fold without refitting hyperparameters")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--variant", type=int, choices=range(1, 10))
    c.add_argument("-o", "--output", help="point-wise CSV report")
    c.add_argument("--json", help="JSON summary path")
    c.add_argument("--deterministic", action="store_true", default=argparse.SUPPRESS)

    s = sub.add_parser("scenario", help="conditional prediction given scenario observations")
    s.add_argument("model")
    s.add_argument("scenario_data")
    s.add_argument("--predict-species", required=True)
    s.add_argument("--grid", help="prediction grid CSV (default: training sites)")
    s.add_argument("-o", "--output")
    s.add_argument("--scenario-only", action="store_true",
                   help="condition on the scenario data alone, not the training data")
    s.add_argument("--samples", type=int, default=2000)
    s.add_argument("--z", type=float, default=1.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--deterministic", action="store_true", default=argparse.SUPPRESS)

    m = sub.add_parser("simulate", help="write a synthetic dataset")
    m.add_argument("kind", choices=("spatial-two-species", "lmc-generic"))
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("-o", "--output", required=True)
    m.add_argument("--config-out", help="write a matching model configuration")
    m.add_argument("--regions-out", help="write site_id,region labels")
    m.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a generator setting (JSON value)")
    m.add_argument("--deterministic", action="store_true", default=argparse.SUPPRESS)
    return p


def _load_config(path, variant=None):
    from .config import expand_variant, load_config

    cfg = load_config(path)
    return expand_variant(cfg, variant) if variant is not None else cfg


def _cmd_fit(args):
    from .datasets import load_dataset
    from .model import MVGP
    from .persist import save_model

    cfg = _load_config(args.config, args.variant)
    if args.max_iter is not None:
        cfg.optimizer.max_iter = args.max_iter
    if args.restarts is not None:
        cfg.optimizer.n_restarts = args.restarts
    data = load_dataset(args.data, cfg)
    model = MVGP(cfg, data)
    res = model.fit()
    save_model(model, args.output)
    print(json.dumps({"converged": bool(res.converged), "objective": res.fun,
                      "grad_norm": res.grad_norm, "iterations": res.n_iter,
                      "log_marginal": model.state.log_q, "params": model.describe()}))
    return 0


def _training_grid(model):
    import pandas as pd

    from .datasets import RasterGrid

    ds = model.data
    df = pd.DataFrame(ds.covariates, columns=ds.covariate_names)
    df["site_id"] = ds.site_id
    df["cell_x"] = ds.coords[:, 0]
    df["cell_y"] = ds.coords[:, 1]
    g = df.groupby("site_id", sort=True).first()
    return RasterGrid(g["cell_x"].to_numpy(), g["cell_y"].to_numpy(),
                      g[ds.covariate_names].to_numpy(float), list(ds.covariate_names))


def _cmd_predict(args):
    from .datasets import load_grid
    from .grid import predict_to_grid
    from .persist import load_model

    model = load_model(args.model)
    grid = load_grid(args.grid)
    species = args.species.split(",") if args.species else None
    predict_to_grid(model, grid, species=species, z=args.z, n_samples=args.samples,
                    seed=args.seed, path=args.output)
    return 0


def _cmd_cv(args):
    import pandas as pd

    from .crossval import FoldSpec, kfold_cv, loo_cv_laplace, structured_folds
    from .datasets import load_dataset
    from .model import MVGP

    cfg = _load_config(args.config, args.variant)
    data = load_dataset(args.data, cfg)
    if args.mode == "loo":
        model = MVGP(cfg, data)
        model.fit()
        report = loo_cv_laplace(model)
    else:
        if args.folds:
            lab = pd.read_csv(args.folds, dtype=str)
            if not {"site_id", "region"} <= set(lab.columns):
                raise SchemaError(f"{args.folds}: expected columns site_id,region")
            folds = structured_folds(data, dict(zip(lab["site_id"], lab["region"])))
        else:
            folds = FoldSpec.random(len(data), args.k, seed=args.seed)
        report = kfold_cv(cfg, data, folds, refit=not args.no_refit)
    if args.output:
        report.to_csv(args.output)
    text = report.to_json(args.json)
    print(text if not args.json else json.dumps({"mean": report.mean, "se": report.se}))
    return 0


def _cmd_scenario(args):
    from .datasets import load_dataset, load_grid
    from .grid import predict_to_grid
    from .persist import load_model

    model = load_model(args.model)
    scen = load_dataset(args.scenario_data, model.config, standardize=False)
    species = args.predict_species.split(",")
    grid = load_grid(args.grid) if args.grid else _training_grid(model)
    df = predict_to_grid(model, grid, species=species, z=args.z, n_samples=args.samples,
                         seed=args.seed, scenario=scen, include_training=not args.scenario_only,
                         path=args.output)
    if not args.output:
        df.to_csv(sys.stdout, index=False, float_format="%.17g")
    return 0


def _cmd_simulate(args):
    import pandas as pd

    from .datasets import write_dataset
    from .simulate import simulate

    params = {}
    for item in args.set:
        if "=" not in item:
            raise SchemaError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        try:
            params[k] = json.loads(v)
        except json.JSONDecodeError:
            params[k] = v
    sim = simulate(args.kind, seed=args.seed, **params)
    write_dataset(sim.data, args.output)
    if args.config_out:
        sim.config.to_json(args.config_out)
    if args.regions_out:
        pd.DataFrame({"site_id": sim.data.site_id, "region": sim.regions}).to_csv(
            args.regions_out, index=False)
    return 0


_COMMANDS = {"fit": _cmd_fit, "predict": _cmd_predict, "cv": _cmd_cv,
             "scenario": _cmd_scenario, "simulate": _cmd_simulate}


def main(argv=None):
    args = _parser().parse_args(argv)
    limit = 1 if args.deterministic else os.environ.get("MVGP_THREADS")
    try:
        limit = None if limit is None else int(limit)
    except ValueError:
        sys.stderr.write(json.dumps({"error": "UsageError",
                                     "message": "MVGP_THREADS must be an integer"}) + "\n")
        return 2
    try:
        with threadpool_limits(limits=limit):
            np.seterr(over="ignore", under="ignore")
            return _COMMANDS[args.command](args)
    except (MVGPError, OSError, ValueError) as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
