"""Command-line front end.

``cloudrls run`` simulates a scenario for a set of estimators and seeds and
writes CSV tables; ``cloudrls compare`` ranks estimators across metric files;
``cloudrls presets`` lists the built-in scenarios or prints one as a config
file.

Options of ``run`` can also be given through environment variables named
``CLOUDRLS_<OPTION>``, e.g. ``CLOUDRLS_MAX_ITERS=20``; explicit flags win.

Exit codes: 0 success, 2 invalid configuration, 3 numerical failure,
4 malformed or empty metrics input.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from cloudrls.config import dump_config, load_config
from cloudrls.errors import ConditioningError, ConfigurationError
from cloudrls.metrics import evaluate
from cloudrls.scenarios import PRESETS, ScenarioConfig, generate, preset
from cloudrls.sim import ESTIMATORS, RunResult, estimators_for, run_simulation

__all__ = ["main", "EXIT_OK", "EXIT_CONFIG", "EXIT_NUMERICAL", "EXIT_SCHEMA"]

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_SCHEMA = 0, 2, 3, 4
ENV_PREFIX = "CLOUDRLS_"
LABELS = {"c-rls": "C-RLS", "s-rls": "S-RLS", "sw-rls": "SW-RLS", "m-rls": "M-RLS",
          "mw-rls": "MW-RLS", "admm-rls": "ADMM-RLS"}
TRAJECTORY_COLUMNS = ("estimator", "seed", "t", "agent_id", "component",
                      "theta_true", "theta_rls", "theta_fused", "theta_global")
REQUIRED_METRIC_COLUMNS = ("estimator", "seed", "rmse_norm")


class SchemaError(Exception):
    pass


def fmt(x) -> str:
    """17 significant digits, so that values round-trip exactly."""
    if x is None:
        return ""
    x = float(x)
    return "nan" if math.isnan(x) else "%.17g" % x


def atomic_write(path: Path, data: str | bytes) -> None:
    """Write through a temporary file in the same directory, then rename."""
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"newline": ""})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def parse_seeds(text: str) -> list[int]:
    """``"10"`` means seeds 0..9; a comma list (``"3,7"`` or ``"5,"``) is taken literally."""
    text = text.strip()
    try:
        if "," in text:
            seeds = [int(s) for s in text.split(",") if s.strip()]
        else:
            count = int(text)
            if count < 1:
                raise ValueError
            seeds = list(range(count))
    except ValueError:
        raise ConfigurationError(f"--seeds expects a positive count or a comma list, got {text!r}") from None
    if not seeds or any(s < 0 for s in seeds):
        raise ConfigurationError(f"seeds must be non-negative integers, got {text!r}")
    return seeds


def _global_columns(P: np.ndarray) -> list[int | None]:
    """For each local component, the global component it maps to (unit rows of P only)."""
    out: list[int | None] = [None] * P.shape[1]
    for j, row in enumerate(P):
        nz = np.flatnonzero(row)
        if len(nz) == 1 and row[nz[0]] == 1.0:
            out[nz[0]] = j
    return out


def trajectory_rows(result: RunResult) -> str:
    T, N, n = result.theta_true.shape
    gcol = _global_columns(result.P)
    buf = io.StringIO()
    est, seed = result.estimator, result.seed
    for t in range(T):
        g = [fmt(result.theta_global[t, j]) if j is not None else "" for j in gcol]
        for a in range(N):
            tru, rls, fus = result.theta_true[t, a], result.theta_rls[t, a], result.theta_fused[t, a]
            for i in range(n):
                buf.write(f"{est},{seed},{t + 1},{a},{i},{fmt(tru[i])},{fmt(rls[i])},{fmt(fus[i])},{g[i]}\n")
    return buf.getvalue()


def metric_row(result: RunResult, data) -> dict[str, str]:
    m = evaluate(result, data)
    row = {"estimator": result.estimator, "seed": str(result.seed)}
    for i, v in enumerate(m.rmse_global, start=1):
        row[f"rmse_g_{i}"] = fmt(v)
    row["rmse_norm"] = fmt(m.rmse_norm)
    finite = m.snr[np.isfinite(m.snr)]
    for stat, fn in (("min", np.min), ("mean", np.mean), ("max", np.max)):
        row[f"snr_{stat}"] = fmt(fn(finite)) if finite.size else ""
    n_theta = result.theta_true.shape[2]
    for i in range(n_theta):
        row[f"violations_pct_{i + 1}"] = "" if m.violation_pct is None else fmt(m.violation_pct[i])
    totals = result.log.totals()
    row["iterations_mean"] = fmt(result.iterations.mean())
    row["node_to_cloud"] = str(totals["node_to_cloud"])
    row["cloud_to_node"] = str(totals["cloud_to_node"])
    row["broadcast"] = str(totals["broadcast"])
    return row


def to_csv(rows: list[dict[str, str]]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def _stats(values: list[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    return float(arr.mean()), float(arr.std(ddof=1)) if arr.size > 1 else 0.0


def summary_table(cfg: ScenarioConfig, seeds, rows) -> str:
    """Estimators as columns and one row of mean ||RMSE^g||_2, as in the reference tables."""
    by_est: dict[str, list[float]] = {}
    for r in rows:
        by_est.setdefault(r["estimator"], []).append(float(r["rmse_norm"]))
    names = [e for e in ESTIMATORS if e in by_est]
    head = [""] + [LABELS[e] for e in names]
    mean = ["||RMSE^g||_2"] + ["%.2f" % _stats(by_est[e])[0] for e in names]
    std = ["std"] + ["%.2f" % _stats(by_est[e])[1] for e in names]
    widths = [max(len(c[i]) for c in (head, mean, std)) for i in range(len(head))]
    line = lambda cells: "| " + " | ".join(c.rjust(w) for c, w in zip(cells, widths)) + " |"
    rule = "+-" + "-+-".join("-" * w for w in widths) + "-+"
    title = (f"{cfg.name}: N={cfg.n_agents}, T={cfg.horizon}, "
             f"seeds {', '.join(map(str, seeds))}")
    return "\n".join([title, rule, line(head), rule, line(mean), line(std), rule, ""])


def _env(name: str, default=None):
    return os.environ.get(ENV_PREFIX + name.upper().replace("-", "_"), default)


def _build_config(args) -> tuple[ScenarioConfig, str]:
    if args.config and args.preset:
        raise ConfigurationError("give either --preset or --config, not both")
    if args.config:
        cfg, source = load_config(args.config), str(args.config)
    else:
        name = args.preset or "example1"
        cfg, source = preset(name), name
    overrides = {}
    for flag, key in (("max_iters", "solver.max_iters"), ("rho", "solver.rho"), ("rho1", "solver.rho1"),
                      ("rho2", "solver.rho2"), ("tol", "solver.tol"), ("lam", "lam"),
                      ("agents", "n_agents"), ("horizon", "horizon")):
        val = getattr(args, flag)
        if val is not None:
            overrides[key] = val
    return (cfg.with_overrides(**overrides) if overrides else cfg), source


def _estimators(requested: list[str] | None, cfg: ScenarioConfig) -> list[str]:
    requested = requested or ["admm-rls"]
    out: list[str] = []
    for item in requested:
        for name in item.split(","):
            name = name.strip().lower()
            if name == "all":
                out.extend(estimators_for(cfg))
            elif name in ESTIMATORS:
                out.append(name)
            else:
                raise ConfigurationError(f"unknown estimator {name!r}; expected one of {', '.join(ESTIMATORS)} or all")
    return list(dict.fromkeys(out))


def cmd_run(args) -> int:
    cfg, source = _build_config(args)
    estimators = _estimators(args.estimator, cfg)
    seeds = parse_seeds(args.seeds)
    out = Path(args.out)
    rows, traj = [], [",".join(TRAJECTORY_COLUMNS) + "\n"]
    for k, seed in enumerate(seeds):
        data = generate(cfg.with_overrides(seed=seed))
        for est in estimators:
            result = run_simulation(data, est)
            rows.append(metric_row(result, data))
            if args.trajectories == "all" or (args.trajectories == "first" and k == 0):
                traj.append(trajectory_rows(result))
            if not args.quiet:
                print(f"{est} seed={seed} ||RMSE^g||_2={float(rows[-1]['rmse_norm']):.4f}", file=sys.stderr)

    files = {"metrics.csv": to_csv(rows), "summary.txt": summary_table(cfg, seeds, rows),
             "scenario.ini": dump_config(cfg)}
    if args.trajectories != "none":
        files["trajectories.csv"] = "".join(traj)
    inventory = []
    for name, text in files.items():
        blob = text.encode()
        atomic_write(out / name, blob)
        inventory.append({"file": name, "bytes": len(blob), "sha256": hashlib.sha256(blob).hexdigest()})
    manifest = {"scenario": cfg.name, "source": source, "estimators": estimators, "seeds": seeds,
                "output_dir": str(out), "files": inventory}
    atomic_write(out / "manifest.json", json.dumps(manifest, indent=2) + "\n")
    print(files["summary.txt"], end="")
    return EXIT_OK


def read_metrics(paths: list[str]) -> list[dict[str, str]]:
    rows: list[dict[str, str]] = []
    header: list[str] | None = None
    for p in paths:
        try:
            text = Path(p).read_text()
        except OSError as exc:
            raise SchemaError(f"{p}: cannot read ({exc.strerror})") from None
        reader = csv.DictReader(io.StringIO(text))
        cols = reader.fieldnames or []
        for col in REQUIRED_METRIC_COLUMNS:
            if col not in cols:
                raise SchemaError(f"{p}: missing required column {col!r}")
        if header is None:
            header = cols
        elif cols != header:
            extra = [c for c in cols if c not in header] + [c for c in header if c not in cols]
            bad = extra[0] if extra else next(c for c, d in zip(cols, header) if c != d)
            raise SchemaError(f"{p}: column {bad!r} does not match the first file's schema")
        for line, row in enumerate(reader, start=2):
            try:
                float(row["rmse_norm"])
                int(row["seed"])
            except (TypeError, ValueError):
                raise SchemaError(f"{p}:{line}: column 'rmse_norm' or 'seed' is not numeric") from None
            rows.append(row)
    if not rows:
        raise SchemaError("no data: the metrics input contains no rows")
    return rows


def cmd_compare(args) -> int:
    rows = read_metrics(args.files)
    groups: dict[str, list[float]] = {}
    for r in rows:
        groups.setdefault(r["estimator"], []).append(float(r["rmse_norm"]))
    ranked = sorted(((*_stats(v), len(v), e) for e, v in groups.items()), key=lambda x: (x[0], x[3]))
    width = max(len("estimator"), *(len(e) for *_, e in ranked))
    lines = [f"{'rank':>4}  {'estimator':<{width}}  {'mean':>10}  {'std':>10}  {'runs':>4}"]
    table = [{"rank": "rank", "estimator": "estimator", "mean_rmse_norm": "mean_rmse_norm",
              "std_rmse_norm": "std_rmse_norm", "runs": "runs"}]
    for rank, (mean, std, n, e) in enumerate(ranked, start=1):
        lines.append(f"{rank:>4}  {e:<{width}}  {mean:>10.4f}  {std:>10.4f}  {n:>4}")
        table.append({"rank": str(rank), "estimator": e, "mean_rmse_norm": fmt(mean),
                      "std_rmse_norm": fmt(std), "runs": str(n)})
    text = "\n".join(lines) + "\n"
    print(text, end="")
    if args.out:
        out = Path(args.out)
        atomic_write(out / "compare.csv", to_csv(table[1:]) if len(table) > 1 else "")
        atomic_write(out / "compare.txt", text)
    return EXIT_OK


def cmd_presets(args) -> int:
    if args.dump:
        try:
            print(dump_config(preset(args.dump)), end="")
        except ConfigurationError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        return EXIT_OK
    for name, cfg in PRESETS.items():
        print(f"{name:<24} N={cfg.n_agents:<4} T={cfg.horizon:<5} {cfg.law:<8} {cfg.solver.consensus}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cloudrls", description="Cloud-aided collaborative RLS experiments.")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate a scenario and write metric tables")
    src = run.add_argument_group("scenario")
    src.add_argument("--preset", default=_env("preset"), choices=sorted(PRESETS), help="built-in scenario")
    src.add_argument("--config", default=_env("config"), help="scenario file (INI)")
    run.add_argument("--estimator", action="append", default=None,
                     help=f"one of {', '.join(ESTIMATORS)} or 'all'; repeatable (default admm-rls)")
    run.add_argument("--seeds", default=_env("seeds", "1"), help="seed count N (seeds 0..N-1) or list '3,7'")
    run.add_argument("--out", default=_env("out", "results"), help="output directory")
    for flag, typ, dest in (("--max-iters", int, "max_iters"), ("--rho", float, "rho"),
                            ("--rho1", float, "rho1"), ("--rho2", float, "rho2"),
                            ("--lambda", float, "lam"), ("--tol", float, "tol"),
                            ("--agents", int, "agents"), ("--horizon", int, "horizon")):
        env = _env(dest if dest != "lam" else "lambda")
        run.add_argument(flag, type=typ, dest=dest, default=None if env is None else typ(env))
    run.add_argument("--trajectories", choices=("all", "first", "none"), default=_env("trajectories", "first"),
                     help="which seeds get per-step trajectories written (default: first)")
    run.add_argument("--quiet", action="store_true", help="no per-run progress on stderr")
    run.set_defaults(func=cmd_run)

    cmp = sub.add_parser("compare", help="rank estimators across metrics.csv files")
    cmp.add_argument("files", nargs="*")
    cmp.add_argument("--out", default=None, help="also write compare.csv/compare.txt here")
    cmp.set_defaults(func=cmd_compare)

    pre = sub.add_parser("presets", help="list built-in scenarios")
    pre.add_argument("--dump", metavar="NAME", help="print the preset as a scenario file")
    pre.set_defaults(func=cmd_presets)
    return ap


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ValueError as exc:  # malformed CLOUDRLS_* value
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConditioningError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA


if __name__ == "__main__":
    sys.exit(main())
