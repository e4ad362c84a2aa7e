"""Batch command-line front end.

Commands: synth | train | eval | params | ingest.  Flag values override the
optional JSON config file, which overrides the built-in training defaults
(learning rate 0.0007, dropout 0.05, 72 hidden units, batch size 128), so
the zero-config behaviour is the reference configuration.  Every command
writes a manifest holding the resolved configuration, seed, library version
and input fingerprints; outputs are byte-for-byte reproducible from it.

Exit codes: 0 success, 2 usage, 3 data/input problems, 4 training divergence,
1 anything unexpected.
"""

from __future__ import annotations

import argparse
import glob
import hashlib
import json
import sys
from pathlib import Path

from ._version import __version__
from . import dataset as ds
from . import evaluation as ev
from . import model as md
from .deadreckon import Calibration
from .errors import DivergenceError, WheelNavError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_DIVERGENCE = 4

_PARAM_TABLE_WIDTHS = (32, 48, 64, 72, 128, 256, 512)
_PARAM_TABLE_CELLS = (md.CellKind.SRNN, md.CellKind.GRU, md.CellKind.LSTM, md.CellKind.IDNN)


def _file_sha256(path: Path) -> str:
    digest = hashlib.sha256()
    digest.update(path.read_bytes())
    return digest.hexdigest()


def _write_manifest(out_dir: Path, name: str, payload: dict) -> None:
    doc = {"library_version": __version__, **payload}
    (out_dir / name).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    return json.loads(Path(path).read_text())


def _resolve(flag, config: dict, key: str, default):
    if flag is not None:
        return flag
    if key in config:
        return config[key]
    return default


def _expand_glob(pattern: str) -> list[Path]:
    paths = sorted(Path(p) for p in glob.glob(pattern))
    if not paths:
        raise WheelNavError(f"no files match {pattern!r}")
    return paths


def _load_segments(patterns: str, schema_path: str) -> tuple[list, list[Path]]:
    schema = ds.load_schema(schema_path)
    paths = _expand_glob(patterns)
    segments = []
    for path in paths:
        segments.extend(ds.ingest_csv(path, schema))
    return segments, paths


# ---------------------------------------------------------------------------
# commands


def _cmd_synth(args: argparse.Namespace) -> int:
    cfg_dict = _load_config_file(args.config)
    if args.seed is not None:
        cfg_dict["seed"] = args.seed
    cfg = ds.SyntheticConfig.from_dict(cfg_dict)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = ds.generate_synthetic(cfg)
    csv_path = out_dir / f"{args.name}.csv"
    schema_path = out_dir / f"{args.name}.schema.txt"
    ds.export_csv([records], csv_path)
    schema_path.write_text(ds.schema_text(ds.canonical_schema()))
    _write_manifest(
        out_dir,
        f"{args.name}.manifest.json",
        {
            "command": "synth",
            "config": cfg.to_dict(),
            "seed": cfg.seed,
            "outputs": {
                csv_path.name: _file_sha256(csv_path),
                schema_path.name: _file_sha256(schema_path),
            },
        },
    )
    print(f"wrote {csv_path} ({len(records)} records)")
    return EXIT_OK


def _cmd_train(args: argparse.Namespace) -> int:
    config = _load_config_file(args.config)
    model_cfg = md.ModelConfig(
        cell=md.CellKind(_resolve(args.cell, config, "cell", "srnn")),
        hidden=int(_resolve(args.hidden, config, "hidden", 72)),
        dropout_rate=float(_resolve(args.dropout, config, "dropout_rate", 0.05)),
        seed=int(_resolve(args.seed, config, "seed", 0)),
        stateful=not bool(_resolve(args.stateless or None, config, "stateless", False)),
    )
    train_cfg = md.TrainConfig(
        learning_rate=float(_resolve(args.lr, config, "learning_rate", 0.0007)),
        batch_size=int(_resolve(args.batch, config, "batch_size", 128)),
        epochs=int(_resolve(args.epochs, config, "epochs", 100)),
        seed=int(_resolve(args.seed, config, "seed", 0)),
    )
    calibration_r = float(_resolve(args.r, config, "calibration_r", 0.3))

    segments, paths = _load_segments(args.data, args.schema)
    cal = Calibration(calibration_r)
    windows = [ds.build_windows(seg, cal) for seg in segments]
    windows = [w for w in windows if w]
    model, trace = md.train(windows, model_cfg, train_cfg, calibration_r)

    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    md.save_model(model, out_path)
    trace_path = out_path.with_suffix(out_path.suffix + ".loss.csv")
    trace_path.write_text(
        "epoch,mae\n" + "".join(f"{i},{repr(v)}\n" for i, v in enumerate(trace))
    )
    _write_manifest(
        out_path.parent,
        out_path.name + ".manifest.json",
        {
            "command": "train",
            "model_config": {
                "cell": model_cfg.cell.value,
                "hidden": model_cfg.hidden,
                "dropout_rate": model_cfg.dropout_rate,
                "seed": model_cfg.seed,
                "stateful": model_cfg.stateful,
            },
            "train_config": {
                "learning_rate": train_cfg.learning_rate,
                "batch_size": train_cfg.batch_size,
                "epochs": train_cfg.epochs,
                "seed": train_cfg.seed,
            },
            "calibration_r": calibration_r,
            "seed": train_cfg.seed,
            "inputs": {str(p): _file_sha256(p) for p in paths},
            "outputs": {out_path.name: _file_sha256(out_path)},
        },
    )
    print(f"wrote {out_path} (final MAE {trace[-1]:.4f} m)")
    return EXIT_OK


def _cmd_eval(args: argparse.Namespace) -> int:
    model = None if args.null_model else md.load_model(args.model)
    calibration_r = model.calibration_r if model is not None else args.r
    segments, paths = _load_segments(args.data, args.schema)
    cal = Calibration(calibration_r)
    windows = [ds.build_windows(seg, cal) for seg in segments]
    report = ev.run_outage_experiment(model, windows, args.outage_len)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    table = ev.render_table(report)
    (out_dir / "report.txt").write_text(table)
    ev.write_report_csv(out_dir / "report.csv", report)
    ev.write_geojson(out_dir / "trajectories.geojson", report)
    _write_manifest(
        out_dir,
        "manifest.json",
        {
            "command": "eval",
            "model": None if args.null_model else str(args.model),
            "null_model": bool(args.null_model),
            "outage_len_s": args.outage_len,
            "calibration_r": calibration_r,
            "seed": args.seed,
            "inputs": {str(p): _file_sha256(p) for p in paths},
            "outputs": {
                name: _file_sha256(out_dir / name)
                for name in ("report.txt", "report.csv", "trajectories.geojson")
            },
        },
    )
    print(table, end="")
    return EXIT_OK


def _cmd_params(args: argparse.Namespace) -> int:
    if args.table:
        header = ["neurons"] + [cell.value for cell in _PARAM_TABLE_CELLS]
        print("  ".join(f"{h:>9}" for h in header))
        for width in _PARAM_TABLE_WIDTHS:
            row = [f"{width:>9}"] + [
                f"{md.param_count(cell, args.input_dim, width):>9,}"
                for cell in _PARAM_TABLE_CELLS
            ]
            print("  ".join(row))
    else:
        print(md.param_count(md.CellKind(args.cell), args.input_dim, args.hidden))
    return EXIT_OK


def _cmd_ingest(args: argparse.Namespace) -> int:
    segments, paths = _load_segments(args.data, args.schema)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "canonical.csv"
    ds.export_csv(segments, csv_path)
    schema_path = out_dir / "canonical.schema.txt"
    schema_path.write_text(ds.schema_text(ds.canonical_schema()))
    cal = Calibration(args.r)
    n_windows = sum(len(ds.build_windows(seg, cal)) for seg in segments)
    summary = {
        "command": "ingest",
        "seed": args.seed,
        "n_records": sum(len(seg) for seg in segments),
        "n_segments": len(segments),
        "n_windows": n_windows,
        "calibration_r": args.r,
        "inputs": {str(p): _file_sha256(p) for p in paths},
        "outputs": {csv_path.name: _file_sha256(csv_path)},
    }
    _write_manifest(out_dir, "manifest.json", summary)
    print(
        f"{summary['n_records']} records, {summary['n_segments']} segments, "
        f"{n_windows} windows -> {csv_path}"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wheelnav",
        description="Wheel-odometry positioning with a learned error correction.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the seed")
    common.add_argument("--config", default=None, help="JSON config file")

    p_synth = sub.add_parser(
        "synth", parents=[common], help="generate a synthetic drive corpus"
    )
    p_synth.add_argument("--out", required=True, help="output directory")
    p_synth.add_argument("--name", default="synthetic", help="output file stem")
    p_synth.set_defaults(func=_cmd_synth)

    p_train = sub.add_parser(
        "train", parents=[common], help="train an error predictor"
    )
    p_train.add_argument("--data", required=True, help="glob of input CSV files")
    p_train.add_argument("--schema", required=True, help="schema config file")
    p_train.add_argument("--out", required=True, help="model file to write")
    p_train.add_argument("--cell", choices=[c.value for c in md.CellKind], default=None)
    p_train.add_argument("--hidden", type=int, default=None, help="hidden units (default 72)")
    p_train.add_argument("--lr", type=float, default=None, help="learning rate (default 0.0007)")
    p_train.add_argument("--batch", type=int, default=None, help="batch size (default 128)")
    p_train.add_argument("--epochs", type=int, default=None, help="epochs (default 100)")
    p_train.add_argument("--dropout", type=float, default=None, help="dropout rate (default 0.05)")
    p_train.add_argument("--r", type=float, default=None, help="calibration constant, m (default 0.3)")
    p_train.add_argument("--stateless", action="store_true", help="reset state every window")
    p_train.set_defaults(func=_cmd_train)

    p_eval = sub.add_parser(
        "eval", parents=[common], help="run a GNSS-outage experiment"
    )
    p_eval.add_argument("--model", default=None, help="trained model file")
    p_eval.add_argument("--data", required=True, help="glob of test CSV files")
    p_eval.add_argument("--schema", required=True, help="schema config file")
    p_eval.add_argument(
        "--outage-len",
        type=int,
        required=True,
        choices=list(ds.OUTAGE_LENGTHS),
        help="outage length in seconds",
    )
    p_eval.add_argument("--out", required=True, help="report directory")
    p_eval.add_argument(
        "--null-model",
        action="store_true",
        help="score the zero correction instead of a trained model",
    )
    p_eval.add_argument("--r", type=float, default=0.3, help="calibration for --null-model")
    p_eval.set_defaults(func=_cmd_eval)

    p_params = sub.add_parser(
        "params", parents=[common], help="trainable-parameter accounting"
    )
    p_params.add_argument("--table", action="store_true", help="print the full grid")
    p_params.add_argument("--cell", choices=[c.value for c in md.CellKind], default="srnn")
    p_params.add_argument("--hidden", type=int, default=72)
    p_params.add_argument("--input-dim", type=int, default=40)
    p_params.set_defaults(func=_cmd_params)

    p_ingest = sub.add_parser(
        "ingest", parents=[common], help="validate CSVs and write a canonical copy"
    )
    p_ingest.add_argument("--data", required=True, help="glob of input CSV files")
    p_ingest.add_argument("--schema", required=True, help="schema config file")
    p_ingest.add_argument("--out", required=True, help="output directory")
    p_ingest.add_argument("--r", type=float, default=0.3, help="calibration constant, m")
    p_ingest.set_defaults(func=_cmd_ingest)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (WheelNavError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # pragma: no cover - defensive
        print(f"unexpected error: {exc}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())
