#!/usr/bin/env python3
"""
Command-line driver for noisy reservoir IPC experiments.

    ipc_lab.py simulate --config configs/minimal.toml --out results/sim
    ipc_lab.py ipc      --config configs/saturation.toml --out results/ipc
    ipc_lab.py bound    --config configs/whitened.toml --out results/bound
    ipc_lab.py sweep    --config configs/sweep.toml --out results/sweep --jobs 4
    ipc_lab.py selftest
"""

import argparse
import asyncio
import json
import logging
import os
import platform
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Dict, List, Optional

# Try to import the toolkit, provide helpful error if it fails
try:
    import numpy as np
    import pandas as pd

    from capacity import bootstrap_stderr, ipc_estimate, null_threshold, regression_moments
    from exceptions import ConfigError, IPCLabError
    from experiment_config import ExperimentConfig, LabSettings, load_config
    from noise_analysis import ROW_COLUMNS, verify_bound
    from reservoir import ensemble_run
    from selftest import format_table, run_selftest
    from streams import (
        BOOTSTRAP_STREAM,
        MATRIX_STREAM,
        SHUFFLE_STREAM,
        SWEEP_STREAM,
        derive_seed,
        stream_manifest,
    )
except ImportError as e:
    print("Error: Could not import required modules.", file=sys.stderr)
    print("Please make sure you have activated the virtual environment:", file=sys.stderr)
    print("  source venv/bin/activate", file=sys.stderr)
    print("Or install dependencies:", file=sys.stderr)
    print("  pip install -r requirements.txt", file=sys.stderr)
    print(f"\nOriginal error: {e}", file=sys.stderr)
    sys.exit(1)

__version__ = "0.1.0"

logger = logging.getLogger("ipc_lab")

SWEEP_COLUMNS = ROW_COLUMNS + ["error"]


@dataclass
class RunManifest:
    """Everything needed to reproduce the files of one command"""
    command: str
    config_digest: str
    config: Dict
    master_seed: int
    streams: Dict = field(default_factory=dict)
    timings: Dict[str, float] = field(default_factory=dict)
    started: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())
    finished: Optional[str] = None
    version: str = __version__

    @contextmanager
    def stage(self, name: str):
        """Time a stage and tag any toolkit error raised inside it"""
        start = time.perf_counter()
        try:
            yield
        except IPCLabError as e:
            e.args = (f"[{name}] {e}",) + e.args[1:]
            raise
        finally:
            self.timings[name] = round(time.perf_counter() - start, 6)

    def to_dict(self) -> Dict:
        return {
            "command": self.command,
            "version": self.version,
            "config_digest": self.config_digest,
            "master_seed": self.master_seed,
            "streams": self.streams,
            "started": self.started,
            "finished": self.finished or datetime.now(timezone.utc).isoformat(),
            "timings": self.timings,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "platform": platform.platform(),
            "config": self.config,
        }


def write_atomic(path: Path, write: Callable[[Path], None]) -> None:
    """Write through a temp file in the same directory, then rename over path"""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=path.suffix)
    os.close(fd)
    try:
        write(Path(tmp))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def write_json(path: Path, data: Dict) -> None:
    write_atomic(path, lambda p: p.write_text(json.dumps(data, indent=2, default=_json_default), encoding="utf-8"))


def write_csv(path: Path, frame: pd.DataFrame, **kwargs) -> None:
    write_atomic(path, lambda p: frame.to_csv(p, **kwargs))


def write_matrix(path: Path, matrix: np.ndarray) -> None:
    write_csv(path, pd.DataFrame(matrix), index=False, header=False)


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def _manifest(command: str, config: ExperimentConfig) -> RunManifest:
    seed = config.seed
    streams = stream_manifest(seed, seed, config.sim.realizations)
    streams.update({
        "matrix": [seed, MATRIX_STREAM],
        "shuffle": [seed, SHUFFLE_STREAM],
        "bootstrap": [seed, BOOTSTRAP_STREAM],
    })
    return RunManifest(command, config.digest(), config.model_dump(mode="json"), seed, streams)


def cmd_simulate(config: ExperimentConfig, out: Path) -> int:
    manifest = _manifest("simulate", config)
    with manifest.stage("simulate"):
        spec = config.build_reservoir()
        ensemble = ensemble_run(spec, config.seed, config.sim.T, config.sim.washout, config.sim.realizations)

    with manifest.stage("write"):
        write_matrix(out / "outputs.csv", ensemble.realizations[0])
        write_matrix(out / "mean.csv", ensemble.mean)
        write_matrix(out / "inputs.csv", ensemble.inputs)
        write_atomic(out / "realizations.npy", lambda p: np.save(p, ensemble.realizations))
    manifest.finished = datetime.now(timezone.utc).isoformat()
    write_json(out / "manifest.json", {**manifest.to_dict(), "ensemble": ensemble.to_dict(), "reservoir": spec.to_dict()})

    print(f"Wrote {ensemble.R} realization(s) of {ensemble.state_dim} x {ensemble.T} outputs to {out}", file=sys.stderr)
    return 0


def cmd_ipc(config: ExperimentConfig, out: Path) -> int:
    manifest = _manifest("ipc", config)
    with manifest.stage("simulate"):
        spec = config.build_reservoir()
        ensemble = ensemble_run(spec, config.seed, config.sim.T, config.sim.washout, config.sim.realizations)
    with manifest.stage("basis"):
        basis = config.build_basis()
    with manifest.stage("capacity"):
        X = ensemble.realizations[0] if config.capacity.regress_on == "realization" else ensemble.mean
        threshold = null_threshold(X, basis, ensemble.inputs, config.capacity.n_shuffles, config.seed)
        moments = regression_moments(X, basis, ensemble.inputs)
        report = ipc_estimate(
            X, basis, ensemble.inputs, threshold, moments=moments,
            metadata={"regress_on": config.capacity.regress_on, **ensemble.provenance(spec)},
        )
        stderr = bootstrap_stderr(moments, threshold, seed=config.seed)

    with manifest.stage("write"):
        write_csv(out / "capacities.csv", report.to_frame(), index=False)
        write_json(out / "ipc.json", {**report.to_dict(), "stderr": stderr, "basis": basis.to_dict()})
    manifest.finished = datetime.now(timezone.utc).isoformat()
    write_json(out / "manifest.json", manifest.to_dict())

    print("\n" + "=" * 80, file=sys.stderr)
    print("IPC SUMMARY", file=sys.stderr)
    print("=" * 80, file=sys.stderr)
    print(f"Outputs n: {spec.state_dim}", file=sys.stderr)
    print(f"Targets D: {basis.D}", file=sys.stderr)
    print(f"IPC total: {report.ipc_total:.4f} +/- {stderr:.4f}", file=sys.stderr)
    print(f"Threshold: {threshold:.3e}", file=sys.stderr)
    print("=" * 80, file=sys.stderr)
    return 0


def _bound_report(config: ExperimentConfig, seed: Optional[int] = None):
    """verify_bound for a config; seed replaces the input/noise seed only"""
    return verify_bound(
        config.build_reservoir(),
        config.build_basis(),
        T=config.sim.T,
        R=config.sim.realizations,
        seed=config.seed if seed is None else seed,
        washout=config.sim.washout,
        n_shuffles=config.capacity.n_shuffles,
        regress_on=config.capacity.regress_on,
        sequences=config.sim.sequences,
    )


def cmd_bound(config: ExperimentConfig, out: Path) -> int:
    manifest = _manifest("bound", config)
    with manifest.stage("bound"):
        report = _bound_report(config)

    with manifest.stage("write"):
        write_csv(out / "bound.csv", pd.DataFrame([report.to_row()], columns=ROW_COLUMNS), index=False)
        write_json(out / "bound.json", report.to_dict())
    manifest.finished = datetime.now(timezone.utc).isoformat()
    write_json(out / "manifest.json", manifest.to_dict())

    print("\n" + "=" * 80, file=sys.stderr)
    print("BOUND SUMMARY", file=sys.stderr)
    print("=" * 80, file=sys.stderr)
    print(f"Measured IPC: {report.ipc_measured:.4f}", file=sys.stderr)
    print(f"Bound: {report.ipc_bound:.4f} (full rank {report.bound_fullrank:.4f})", file=sys.stderr)
    print(f"Margin: {report.margin:.4f} (tolerance {report.tol_stat:.4f})", file=sys.stderr)
    print(f"Result: {'PASS' if report.passed else 'FAIL'}", file=sys.stderr)
    print("=" * 80, file=sys.stderr)
    return 0 if report.passed else 1


def run_sweep_point(config_data: Dict, base_dir: str, index: int, value: float, out: str) -> Dict:
    """
    One sweep point, runnable in a worker process.

    The reservoir matrices come from the master seed so every point probes
    the same system; inputs and noise come from the point's derived seed.
    """
    config = ExperimentConfig.model_validate(config_data)
    config._base_dir = Path(base_dir)
    point_seed = derive_seed(config.seed, SWEEP_STREAM, index)
    row = dict.fromkeys(SWEEP_COLUMNS)
    row.update({"sweep_value": value, "n": config.reservoir.n, "seed": point_seed, "pass": False, "error": ""})
    try:
        point = config.with_value(config.sweep.parameter, value)
        row.update({"T": point.sim.T, "R": point.sim.realizations})
        report = _bound_report(point, seed=point_seed)
        row.update(report.to_row(value))
        row["error"] = ""
        detail = report.to_dict()
    except Exception as e:  # recorded on the row
        logger.warning(f"Sweep point {index} ({config.sweep.parameter}={value}) failed: {str(e)}")
        row["error"] = f"{type(e).__name__}: {str(e)}"
        detail = {"error": row["error"]}
    write_json(Path(out) / "points" / f"point_{index:03d}.json", {**detail, "index": index, "sweep_value": value})
    return row


async def _gather_points(points: List[tuple], jobs: int) -> List[Dict]:
    loop = asyncio.get_running_loop()
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        tasks = [loop.run_in_executor(pool, run_sweep_point, *p) for p in points]
        return await asyncio.gather(*tasks)


def cmd_sweep(config: ExperimentConfig, out: Path, jobs: int = 1) -> int:
    if config.sweep is None:
        raise ConfigError("sweep needs a [sweep] section with parameter and values")
    manifest = _manifest("sweep", config)
    data = config.model_dump(mode="json")
    points = [(data, str(config.base_dir), i, v, str(out)) for i, v in enumerate(config.sweep.values)]
    manifest.streams["sweep"] = [
        {"index": i, "value": v, "seed": derive_seed(config.seed, SWEEP_STREAM, i)} for i, v in enumerate(config.sweep.values)
    ]

    logger.info("=" * 80)
    logger.info(f"Sweeping {config.sweep.parameter} over {len(points)} values with {jobs} job(s)")
    logger.info("=" * 80)
    with manifest.stage("sweep"):
        if jobs <= 1:
            rows = [run_sweep_point(*p) for p in points]
        else:
            rows = asyncio.run(_gather_points(points, jobs))

    frame = pd.DataFrame(rows, columns=SWEEP_COLUMNS)
    write_csv(out / "sweep.csv", frame, index=False)
    manifest.finished = datetime.now(timezone.utc).isoformat()
    write_json(out / "manifest.json", manifest.to_dict())

    failed = int((~frame["pass"].astype(bool)).sum())
    print("\n" + "=" * 80, file=sys.stderr)
    print("SWEEP SUMMARY", file=sys.stderr)
    print("=" * 80, file=sys.stderr)
    print(frame[["sweep_value", "ipc_measured", "ipc_bound", "margin", "pass"]].to_string(index=False), file=sys.stderr)
    print(f"\nFailed points: {failed}/{len(frame)}", file=sys.stderr)
    print("=" * 80, file=sys.stderr)
    return 1 if failed else 0


def cmd_selftest(tolerance_scale: float = 1.0) -> int:
    results = run_selftest(tolerance_scale)
    print(format_table(results))
    return 0 if all(r.passed for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Simulate noisy reservoirs and measure their information processing capacity"
    )
    parser.add_argument("--log-level", type=str, default=None, help="Logging level (default: IPC_LAB_LOG_LEVEL or INFO)")
    commands = parser.add_subparsers(dest="command", required=True)

    for name, help_text in [
        ("simulate", "Simulate output trajectories"),
        ("ipc", "Measure per-target capacities and the IPC total"),
        ("bound", "Check measured IPC against the noise bound"),
        ("sweep", "Run the bound check over a sweep of one parameter"),
    ]:
        command = commands.add_parser(name, help=help_text)
        command.add_argument("--config", type=str, required=True, help="Path to TOML experiment config")
        command.add_argument("--out", type=str, default=None, help=f"Output directory (default: results/{name})")
        command.add_argument("--seed", type=int, default=None, help="Master seed (overrides IPC_LAB_SEED and the config)")
        if name == "sweep":
            command.add_argument("--jobs", type=int, default=1, help="Sweep points run in parallel (default: 1)")

    selftest = commands.add_parser("selftest", help="Run the embedded oracle checks")
    selftest.add_argument(
        "--tolerance-scale",
        type=float,
        default=1.0,
        help="Multiply every check tolerance (0 forces failures; default: 1.0)",
    )
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = args.log_level or LabSettings().LOG_LEVEL
    logging.basicConfig(level=getattr(logging, level.upper(), logging.INFO), format="%(levelname)s %(name)s: %(message)s")

    try:
        if args.command == "selftest":
            return cmd_selftest(args.tolerance_scale)
        config = load_config(args.config, seed=args.seed)
        out = Path(args.out or f"results/{args.command}")
        if args.command == "simulate":
            return cmd_simulate(config, out)
        if args.command == "ipc":
            return cmd_ipc(config, out)
        if args.command == "bound":
            return cmd_bound(config, out)
        return cmd_sweep(config, out, args.jobs)
    except IPCLabError as e:
        print(f"Error: {str(e)}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
