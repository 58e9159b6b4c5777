"""Command-line experiment runner.

    uv run src/main.py simulate --preset fig2 --seed 1
    uv run src/main.py pmmh --preset fig3 --out runs/fig3
    uv run src/main.py hybrid --config experiment.toml --chains 4 --threads 4
    uv run src/main.py oracle-check
    uv run src/main.py diagnose runs/fig3/chain.csv
"""
import argparse
from concurrent.futures import ProcessPoolExecutor
from importlib.metadata import PackageNotFoundError, version
import json
import logging
from pathlib import Path
import platform
import sys

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

import numpy as np
import pandas as pd
from pydantic import ValidationError

import run_log
from config import Config
from diagnostics import mmse_path, rmse, summarize_chain
from errors import ConfigError, PmcmcError
from model_factory import get_model
from models import simulate
from oracle import check_kalman_consistency, check_pmmh_exactness, check_unbiasedness
from presets import Preset, apply_preset
from samplers import run_chain
from schema import Algorithm, ExperimentConfig
from storage import CsvResultStore

logger = logging.getLogger(__name__)

CHAIN_COMMANDS = {
    "pmmh": Algorithm.PMMH,
    "pg": Algorithm.PG,
    "hybrid": Algorithm.HYBRID,
    "abc-pmmh": Algorithm.PMMH,
}


def package_version() -> str:
    try:
        return version("pmcmc-prc")
    except PackageNotFoundError:
        return "unknown"


def load_config(path: str | None, preset: str | None, command: str) -> ExperimentConfig:
    """Read the TOML file, lay it over the preset and validate it"""
    raw: dict = {}
    if path:
        try:
            with open(path, "rb") as f:
                raw = tomllib.load(f)
        except FileNotFoundError:
            raise ConfigError(f"Config file not found: {path}", field="--config")
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"Config file {path} is not valid TOML: {e}", field="--config")

    raw = apply_preset(preset, raw)
    if command in CHAIN_COMMANDS:
        chain = raw.setdefault("chain", {})
        chain["algorithm"] = CHAIN_COMMANDS[command].value
        if command == "abc-pmmh":
            chain.setdefault("filter", {}).setdefault("abc", {})

    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as e:
        first = e.errors()[0]
        field = ".".join(str(part) for part in first["loc"]) or None
        raise ConfigError(first["msg"], field=field) from e


def resolve_seed(args, config: ExperimentConfig) -> int:
    if args.seed is not None:
        return args.seed
    if config.seed is not None:
        return config.seed
    return Config.DEFAULT_SEED


def load_data(config: ExperimentConfig, store: CsvResultStore, data_path: str | None):
    """(x_true or None, y) from --data, the config's data.path, or a fresh simulation"""
    path = data_path or config.data.path
    if path:
        x_true, y = store.load_dataset(path)
        logger.info(f"Loaded {y.size} observations from {path}")
        return x_true, y
    model = get_model(config.model)
    return simulate(model, model.default_theta(), config.data.T, config.data.seed)


def write_manifest(store: CsvResultStore, args, config: ExperimentConfig, seed: int, outputs: dict):
    resolved = config.model_dump(mode="json")
    resolved["environment"] = {
        "package_version": package_version(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "preset": args.preset,
        "chains": getattr(args, "chains", 1),
    }
    return store.save_manifest(args.command, resolved, seed, outputs)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(args, config: ExperimentConfig, store: CsvResultStore, seed: int) -> int:
    model = get_model(config.model)
    theta = model.default_theta()
    x_true, y = simulate(model, theta, config.data.T, seed)
    path = store.save_dataset(x_true, y)
    write_manifest(store, args, config, seed, {"dataset": path})
    return 0


def _chain_job(job: dict) -> dict:
    """Run one chain; top level so a process pool can pickle it"""
    config = ExperimentConfig.model_validate_json(job["config"])
    model = get_model(config.model)
    y = np.asarray(job["y"])
    x_true = None if job["x_true"] is None else np.asarray(job["x_true"])
    output = run_chain(config.chain.algorithm, model, y, config.chain, seed=job["seed"], true_path=x_true)
    frame = output.to_frame()
    summary = summarize_chain(frame, output.theta_names)
    summary["seed"] = job["seed"]
    if output.paths.size:
        burn = 0.2 if output.paths.shape[0] > 1 else 0
        estimate = mmse_path(output.paths, burn)
        summary["mmse_path"] = estimate.tolist()
        if x_true is not None:
            summary["mmse_rmse"] = rmse(estimate, x_true)
    if output.rmse_checkpoints:
        summary["rmse_checkpoints"] = output.rmse_checkpoints
        summary["initial_path_rmse"] = output.initial_rmse
    trace = output.initial_system.trace_frame() if job["trace"] and output.initial_system is not None else None
    return {"frame": frame, "summary": summary, "trace": trace}


def cmd_chain(args, config: ExperimentConfig, store: CsvResultStore, seed: int) -> int:
    x_true, y = load_data(config, store, args.data)
    dataset_path = store.save_dataset(x_true, y)

    config_json = config.model_dump_json()
    jobs = [{"config": config_json, "y": y.tolist(), "x_true": None if x_true is None else x_true.tolist(),
             "seed": seed + i, "trace": args.trace} for i in range(args.chains)]

    if args.chains > 1 and args.threads > 1:
        logger.info(f"Running {args.chains} chains on {args.threads} worker processes")
        with ProcessPoolExecutor(max_workers=args.threads) as pool:
            results = list(pool.map(_chain_job, jobs))
    else:
        results = [_chain_job(job) for job in jobs]

    outputs = {"dataset": dataset_path}
    summaries = []
    for i, result in enumerate(results):
        suffix = "" if args.chains == 1 else f"_{i + 1}"
        outputs[f"chain{suffix}"] = store.save_chain(result["frame"], f"chain{suffix}")
        if result["trace"] is not None:
            outputs[f"trace{suffix}"] = store.save_trace(result["trace"], f"trace{suffix}")
        summaries.append(result["summary"])
    summary = summaries[0] if len(summaries) == 1 else {"chains": summaries}
    outputs["summary"] = store.save_json(summary, "summary")
    write_manifest(store, args, config, seed, outputs)

    for s in summaries:
        logger.info(f"Chain seed {s['seed']}: acceptance rate {s['acceptance_rate']:.3f}, "
                    f"longest freeze {s['longest_freeze']}")
    return 0


def cmd_oracle_check(args, config: ExperimentConfig, store: CsvResultStore, seed: int) -> int:
    params = config.model.linear_gaussian
    results = [
        check_kalman_consistency(seed=seed),
        check_unbiasedness(config.oracle, params, seed=seed),
        check_pmmh_exactness(config.oracle, params, seed=seed),
    ]
    for result in results:
        print(result.summary())
    payload = {r.name: {"passed": r.passed, "statistic": r.statistic, "threshold": r.threshold,
                        "details": r.details} for r in results}
    path = store.save_json(payload, "oracle_check")
    write_manifest(store, args, config, seed, {"oracle_check": path})
    return 0 if all(r.passed for r in results) else 1


def cmd_diagnose(args, config: ExperimentConfig, store: CsvResultStore, seed: int) -> int:
    frame = store.load_chain(args.chain_csv)
    summary = summarize_chain(frame)
    path_cols = [c for c in frame.columns if c.startswith("path_")]
    outputs = {}
    if path_cols:
        paths = frame[path_cols].dropna().to_numpy(dtype=float)
        if paths.size:
            estimate = mmse_path(paths, 0.2 if paths.shape[0] > 1 else 0)
            mmse_frame = pd.DataFrame({"n": np.arange(1, estimate.size + 1), "x_mmse": estimate})
            outputs["mmse_path"] = store.save_chain(mmse_frame, "mmse_path")
            if args.data:
                x_true, _ = store.load_dataset(args.data)
                if x_true is not None:
                    summary["mmse_rmse"] = rmse(estimate, x_true)
    outputs["summary"] = store.save_json(summary, "diagnostics")
    print(json.dumps({k: summary[k] for k in ("iterations", "acceptance_rate", "longest_freeze")}))
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "pmmh": cmd_chain,
    "pg": cmd_chain,
    "hybrid": cmd_chain,
    "abc-pmmh": cmd_chain,
    "oracle-check": cmd_oracle_check,
    "diagnose": cmd_diagnose,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, default=None, help="TOML experiment config")
    common.add_argument("--preset", choices=[p.value for p in Preset], default=None)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out", type=str, default=None,
                        help="Output directory (default: $PMCMC_OUTPUT_DIR/<command>)")
    common.add_argument("--log-level", type=str, default=Config.LOG_LEVEL)

    parser = argparse.ArgumentParser(description="Particle MCMC experiments with PRC and ABC filtering.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="Simulate a dataset from the configured model")
    for name in CHAIN_COMMANDS:
        chain = sub.add_parser(name, parents=[common], help=f"Run {name} chains")
        chain.add_argument("--data", type=str, default=None, help="Dataset CSV with columns n, x_true, y")
        chain.add_argument("--chains", type=int, default=1)
        chain.add_argument("--threads", type=int, default=1)
        chain.add_argument("--trace", action="store_true", help="Dump the initial filter's particles")
    sub.add_parser("oracle-check", parents=[common], help="Run the linear-Gaussian acceptance suites")
    diagnose = sub.add_parser("diagnose", parents=[common], help="Post-process an existing chain CSV")
    diagnose.add_argument("chain_csv", type=str)
    diagnose.add_argument("--data", type=str, default=None, help="Dataset CSV with the true path")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if getattr(args, "chains", 1) < 1 or getattr(args, "threads", 1) < 1:
            raise ConfigError("--chains and --threads must be >= 1", field="--chains")
        config = load_config(args.config, args.preset, args.command)
        seed = resolve_seed(args, config)
        out_dir = Path(args.out) if args.out else Path(Config.OUTPUT_DIR) / args.command
        store = CsvResultStore(out_dir)
        run_log.init(out_dir / Config.RUN_LOG_NAME, run_id=f"{args.command}-{seed}", level=args.log_level)
        logger.info(f"Running {args.command} with seed {seed}, writing to {out_dir}")
        return COMMANDS[args.command](args, config, store, seed)
    except PmcmcError as e:
        print(json.dumps(e.to_dict()), file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
