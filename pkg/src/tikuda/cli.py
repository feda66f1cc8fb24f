"""Command-line entry point: ``tikuda {train,eval,bench-alignment,synthetic,inspect-checkpoint}``.

Configuration is an INI file with sections ``data``, ``model``, ``train`` and
``alignment``.  Any key can be overridden with ``--set section.key=value``;
unknown sections or keys are rejected.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import json
import subprocess
import sys
import time
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__, bench, data, stgnn, trainer
from .recipes import SHIFTS
from .alignment import AlignmentConfig
from .errors import (
    ConfigError,
    DataError,
    NoConvergence,
    NonFiniteLoss,
    NotPositiveDefinite,
    SingularMixing,
)

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

DATA_DEFAULTS: dict[str, Any] = {
    "kind": "synthetic",  # synthetic | csv
    "source": "",
    "target": "",
    "columns": "",  # comma-separated input columns; empty = all but timestamp and target
    "target_column": "y",
    "graph": "full",  # full | file
    "adjacency": "",
    "window": 16,
    "stride": 1,
    "n_steps": 3000,
    "n_sensors": 6,
    "shift": "default",  # default | scale | identity
    "data_seed": 0,
    "shift_seed": 0,
}


def _dataclass_defaults(cls, skip=()) -> dict[str, Any]:
    out = {}
    for f in dataclasses.fields(cls):
        if f.name in skip:
            continue
        out[f.name] = f.default
    return out


SECTIONS: dict[str, dict[str, Any]] = {
    "data": DATA_DEFAULTS,
    "model": _dataclass_defaults(stgnn.ModelConfig, skip=("n_nodes", "in_features", "window")),
    "train": _dataclass_defaults(trainer.TrainConfig),
    "alignment": _dataclass_defaults(AlignmentConfig),
}


def _coerce(section: str, key: str, raw: str, default: Any) -> Any:
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{section}.{key}: cannot parse {raw!r} as {type(default).__name__}") from None
    return raw


def load_config(path: str | None, overrides: Sequence[str] = ()) -> dict[str, dict[str, Any]]:
    """Defaults, then the INI file, then ``section.key=value`` overrides."""
    cfg = {s: dict(v) for s, v in SECTIONS.items()}
    items: list[tuple[str, str, str]] = []
    if path:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except configparser.Error as e:
            raise ConfigError(f"config file {path}: {e}") from None
        for sec in parser.sections():
            for key, val in parser.items(sec):
                items.append((sec, key, val))
    for ov in overrides:
        if "=" not in ov or "." not in ov.split("=", 1)[0]:
            raise ConfigError(f"--set expects section.key=value, got {ov!r}")
        lhs, val = ov.split("=", 1)
        sec, key = lhs.split(".", 1)
        items.append((sec.strip(), key.strip(), val))
    for sec, key, val in items:
        if sec not in cfg:
            raise ConfigError(f"unknown config section [{sec}]")
        if key not in cfg[sec]:
            raise ConfigError(f"unknown key {key!r} in [{sec}]; valid keys: {sorted(cfg[sec])}")
        cfg[sec][key] = _coerce(sec, key, val, SECTIONS[sec][key])
    return cfg


def write_config(path, cfg: dict[str, dict[str, Any]]) -> None:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for sec, vals in cfg.items():
        parser[sec] = {k: repr(v) if isinstance(v, float) else str(v) for k, v in vals.items()}
    with open(path, "w") as fh:
        parser.write(fh)


def build_objects(cfg):
    """Turn a resolved config into typed config objects; invalid values become ConfigError."""
    try:
        train_cfg = trainer.TrainConfig(**cfg["train"])
        align_cfg = AlignmentConfig(**cfg["alignment"])
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None
    d = cfg["data"]
    if d["kind"] not in ("synthetic", "csv"):
        raise ConfigError(f"data.kind must be 'synthetic' or 'csv', got {d['kind']!r}")
    if d["graph"] not in ("full", "file"):
        raise ConfigError(f"data.graph must be 'full' or 'file', got {d['graph']!r}")
    if d["window"] < 1 or d["stride"] < 1:
        raise ConfigError("data.window and data.stride must be >= 1")
    return train_cfg, align_cfg


def synthetic_pair(n_steps: int, n_sensors: int, shift: str, data_seed: int, shift_seed: int):
    if shift not in SHIFTS:
        raise ConfigError(f"unknown shift {shift!r}; expected one of {sorted(SHIFTS)}")
    base, _ = data.generate_base(n_steps, n_sensors, seed=data_seed)
    try:
        spec = SHIFTS[shift](n_sensors=n_sensors, seed=shift_seed)
    except (SingularMixing, DataError, ValueError) as e:
        raise ConfigError(f"invalid shift spec: {e}") from None
    return data.synthesize_shift(base, spec)


def load_domains(d: dict[str, Any]):
    """Raw source/target series and the graph described by a ``[data]`` section."""
    if d["kind"] == "synthetic":
        src, tgt = synthetic_pair(d["n_steps"], d["n_sensors"], d["shift"], d["data_seed"], d["shift_seed"])
    else:
        if not d["source"] or not d["target"]:
            raise ConfigError("data.kind = csv needs data.source and data.target")
        cols = [c.strip() for c in d["columns"].split(",") if c.strip()] or None
        if cols is not None and d["target_column"] not in cols:
            cols.append(d["target_column"])
        for p in (d["source"], d["target"]):
            if not Path(p).is_file():
                raise DataError(f"data file {p} not found")
        src = data.load_csv(d["source"], cols, d["target_column"])
        tgt = data.load_csv(d["target"], list(src.columns), src.target)
    n = len(src.input_columns)
    if d["graph"] == "full":
        graph = data.build_graph("full", n)
    else:
        if not d["adjacency"] or not Path(d["adjacency"]).is_file():
            raise DataError(f"adjacency file {d['adjacency']!r} not found")
        graph = data.build_graph("file", n, d["adjacency"])
    return src, tgt, graph


def prepare(cfg):
    d = cfg["data"]
    src, tgt, graph = load_domains(d)
    norm = data.fit_normalizer(src)
    S = data.make_windows(norm.apply(src), d["window"], d["stride"], "source")
    T = data.make_windows(norm.apply(tgt), d["window"], d["stride"], "target")
    if len(S) == 0 or len(T) == 0:
        raise data.EmptyAfterCleaning("a domain is shorter than one window")
    m = cfg["model"]
    try:
        model_cfg = stgnn.ModelConfig(n_nodes=S.n_nodes, in_features=S.in_features, window=d["window"], **m)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None
    return S, T, graph, norm, model_cfg


def build_id() -> str:
    try:
        rev = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"], cwd=Path(__file__).resolve().parent,
            capture_output=True, text=True, timeout=5,
        )
        if rev.returncode == 0 and rev.stdout.strip():
            return f"{__version__}+g{rev.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def write_traces(path, traces: dict[str, list[float]]) -> None:
    keys = list(traces)
    n = len(traces[keys[0]]) if keys else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", *keys])
        for i in range(n):
            w.writerow([i, *(repr(float(traces[k][i])) for k in keys)])


def read_traces(path) -> dict[str, list[float]]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return {}
    return {k: [float(r[k]) for r in rows] for k in rows[0] if k != "epoch"}


def write_kv(path, values: dict[str, Any]) -> None:
    Path(path).write_text("".join(f"{k}={v!r}\n" for k, v in values.items()))


def read_kv(path) -> dict[str, float]:
    out = {}
    for line in Path(path).read_text().splitlines():
        if line.strip():
            k, v = line.split("=", 1)
            out[k] = float(v)
    return out


def write_pca(path, stages: dict[str, np.ndarray]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stage", "pc1", "pc2"])
        for stage, pts in stages.items():
            for row in pts:
                w.writerow([stage, *(repr(float(v)) for v in row[:2])])


def pca_pair(params, graph, model_cfg, S, T, batch):
    """Joint two-component PCA of source and target features."""
    zs = trainer.extract_features(params, graph, model_cfg, S, batch)
    zt = trainer.extract_features(params, graph, model_cfg, T, batch)
    res = trainer.pca_fit(np.vstack([zs, zt]), k=2)
    return res.transform(zs), res.transform(zt)


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.set)
    train_cfg, align_cfg = build_objects(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_config(out / "config.ini", cfg)
    manifest = {
        "config_path": str(args.config) if args.config else None,
        "config_snapshot": "config.ini",
        "seed": train_cfg.seed,
        "output_dir": str(out),
        "build": build_id(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    S, T, graph, norm, model_cfg = prepare(cfg)
    init_seq = np.random.SeedSequence(train_cfg.seed).spawn(3)[0]
    params = stgnn.init_params(model_cfg, seed=int(init_seq.generate_state(1)[0]))
    pre_s, pre_t = pca_pair(params, graph, model_cfg, S, T, train_cfg.eval_batch)

    t0 = time.perf_counter()

    def progress(epoch, row):
        if not args.quiet:
            print(f"epoch {epoch + 1}/{train_cfg.epochs} loss={row['total']:.5f} src={row['source']:.5f}", flush=True)

    target_name = cfg["data"]["target_column"] if cfg["data"]["kind"] == "csv" else "y"
    params, report = trainer.train_adapt(
        S, T, graph, model_cfg, train_cfg, align_cfg,
        label_range=norm.label_range(target_name), params=params, on_epoch=progress,
    )
    elapsed = time.perf_counter() - t0
    post_s, post_t = pca_pair(params, graph, model_cfg, S, T, train_cfg.eval_batch)

    stgnn.save_checkpoint(out / "checkpoint.npz", params, model_cfg)
    write_kv(out / "metrics.kv", report.scalars())
    write_traces(out / "traces.csv", report.traces)
    write_pca(out / "pca_source.csv", {"pre": pre_s, "post": post_s})
    write_pca(out / "pca_target.csv", {"pre": pre_t, "post": post_t})
    summary = {"method": train_cfg.method, "metrics": report.scalars(), "epochs": train_cfg.epochs,
               "n_source": len(S), "n_target": len(T), "feature_dim": model_cfg.feature_dim}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"{train_cfg.method}: rmse_norm={report.rmse_norm:.5f} mae_norm={report.mae_norm:.5f} "
          f"energy_distance={report.energy_distance:.5g} ({elapsed:.1f}s) -> {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = load_config(args.config, args.set)
    train_cfg, _ = build_objects(cfg)
    if not Path(args.checkpoint).is_file():
        raise DataError(f"checkpoint {args.checkpoint} not found")
    params, model_cfg = stgnn.load_checkpoint(args.checkpoint)
    S, T, graph, norm, data_model_cfg = prepare(cfg)
    if (data_model_cfg.n_nodes, data_model_cfg.window, data_model_cfg.in_features) != (
        model_cfg.n_nodes, model_cfg.window, model_cfg.in_features
    ):
        raise DataError("checkpoint does not match the configured data shape")
    target_name = cfg["data"]["target_column"] if cfg["data"]["kind"] == "csv" else "y"
    T_eval = T if train_cfg.holdout_fraction == 0 else T.split_tail(train_cfg.holdout_fraction)[1]
    report = trainer.evaluate(params, graph, model_cfg, T_eval, norm.label_range(target_name), train_cfg.eval_batch)
    zs = trainer.extract_features(params, graph, model_cfg, S, train_cfg.eval_batch)
    zt = trainer.extract_features(params, graph, model_cfg, T_eval, train_cfg.eval_batch)
    report.energy_distance = trainer.energy_distance(*trainer._subsample_pair(zs, zt, train_cfg.max_energy_points))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_kv(out / "metrics.kv", report.scalars())
    sys.stdout.write(report.to_kv())
    return EXIT_OK


def _int_list(s: str) -> list[int]:
    try:
        return [int(x) for x in s.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {s!r}") from None


def cmd_bench(args) -> int:
    p_list = _int_list(args.p)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    if p_list != sorted(p_list) or not p_list:
        raise ConfigError("--p must be a non-empty ascending list")
    if args.iters < 20:
        raise ConfigError("--iters must be >= 20")
    rows = bench.bench_alignment(p_list, args.batch, args.iters, methods, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    bench.write_bench_csv(out / "bench.csv", rows)
    for r in rows:
        print(f"p={r.p:<6d} {r.method:<14s} median={r.median_s:.6f}s p10={r.p10_s:.6f}s p90={r.p90_s:.6f}s")
    for p, ratio in bench.speed_ratios(rows).items():
        print(f"p={p:<6d} dare-gram/tikuda = {ratio:.2f}x")
    return EXIT_OK


def cmd_synthetic(args) -> int:
    src, tgt = synthetic_pair(args.n_steps, args.n_sensors, args.shift, args.seed, args.shift_seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data.save_csv(out / "source.csv", src)
    data.save_csv(out / "target.csv", tgt)
    print(f"wrote {len(src)} rows x {len(src.columns)} columns to {out}/source.csv and {out}/target.csv")
    return EXIT_OK


def cmd_inspect(args) -> int:
    if not Path(args.checkpoint).is_file():
        raise DataError(f"checkpoint {args.checkpoint} not found")
    params, cfg = stgnn.load_checkpoint(args.checkpoint)
    print(f"config: {dataclasses.asdict(cfg)}")
    total = 0
    for name, p in params.items():
        total += p.data.size
        print(f"{name:<14s} {str(p.data.shape):<12s} |w|_F={np.linalg.norm(p.data):.6g}")
    print(f"parameters: {total}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tikuda", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", help="INI configuration file")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override one configuration key (repeatable)")

    p = sub.add_parser("train", help="train a model and write run artifacts")
    with_config(p)
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the configured target domain")
    with_config(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", help="directory for metrics.kv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench-alignment", help="time alignment losses across feature widths")
    p.add_argument("--p", default="2,128,512,1024", help="comma-separated ascending feature widths")
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--iters", type=int, default=20)
    p.add_argument("--methods", default="tikuda,dare-gram")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("synthetic", help="write a seeded source/target CSV pair")
    p.add_argument("--out", required=True)
    p.add_argument("--n-steps", type=int, default=3000)
    p.add_argument("--n-sensors", type=int, default=6)
    p.add_argument("--shift", default="default", help="default | scale | identity")
    p.add_argument("--seed", type=int, default=0, help="seed of the base series")
    p.add_argument("--shift-seed", type=int, default=0, help="seed of the target-side noise")
    p.set_defaults(func=cmd_synthetic)

    p = sub.add_parser("inspect-checkpoint", help="print a checkpoint's config and parameter shapes")
    p.add_argument("checkpoint")
    p.set_defaults(func=cmd_inspect)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (NotPositiveDefinite, NoConvergence, NonFiniteLoss, FloatingPointError) as e:
        print(f"numerical error: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    raise SystemExit(main())
