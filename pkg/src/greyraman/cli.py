"""Command line entry point: simulate, gen-data, train, predict, evaluate.

Exit codes: 0 ok, 2 usage/config/input data, 3 numeric or convergence
failure, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from . import dataset as ds
from .baseline import BaselineModel, predict_conventional, train_conventional
from .config import load_config
from .errors import (
    ConfigError,
    DimensionMismatch,
    EmptyInput,
    NonConvergence,
    NumericBlowup,
    RankDeficient,
    SchemaError,
    UnpairedRecord,
)
from .evaluation import budget_split, evaluate_model, nested_subset_ids, sweep, write_report
from .greybox import GreyboxModel, predict, train_greybox

log = logging.getLogger("greyraman")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _provenance(cfg, seed) -> dict:
    return {"tool_version": __version__, "config_digest": cfg.digest(), "seed": int(seed)}


def _write_atomic(path, text: str) -> None:
    """Write via a temp file in the target directory so failures leave nothing behind."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _emit(obj: dict, out) -> None:
    text = json.dumps(obj, sort_keys=True) + "\n"
    if out:
        _write_atomic(out, text)
    else:
        sys.stdout.write(text)


def _check_pumps(cfg, pumps):
    if len(pumps) != len(cfg.pumps.wavelengths_nm):
        raise UsageError(f"--pumps needs {len(cfg.pumps.wavelengths_nm)} values, got {len(pumps)}")
    if any(p < 0 for p in pumps):
        raise UsageError("pump powers must be >= 0")


# subcommands ---------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    _check_pumps(cfg, args.pumps)
    launch = ds.gen_launch_profile(args.total_dbm, args.ripple_db, cfg.grid.n_ch, args.seed)
    gain = cfg.setup.net_gain([args.pumps], [launch.per_channel_dbm])[0]
    _emit({
        **_provenance(cfg, args.seed),
        "pump_wavelengths_nm": list(cfg.pumps.wavelengths_nm),
        "pump_powers_w": list(args.pumps),
        "pump_direction": cfg.pumps.direction,
        "total_dbm": launch.total_dbm,
        "ripple_db": launch.ripple_db,
        "freqs_thz": cfg.grid.freqs_thz.tolist(),
        "launch_dbm": launch.per_channel_dbm.tolist(),
        "net_gain_db": gain.tolist(),
    }, args.out)
    return EXIT_OK


def _resume_point(path: Path, prov: dict, tag: str, chunk: int) -> int:
    """Number of leading records in ``path`` that can be kept when resuming."""
    if not path.exists():
        return 0
    kept = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.endswith("\n"):
                break
            rec = ds.record_from_json(line, lineno)
            if rec.provenance != prov or rec.dataset_tag != tag or rec.sample_id != len(kept):
                raise UsageError(f"{path} was produced with different settings; refusing to resume")
            kept.append(line)
    keep = len(kept) - len(kept) % chunk
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(kept[:keep])
    return keep


def cmd_gen_data(args) -> int:
    cfg = load_config(args.config)
    d = cfg.dataset
    setup = cfg.setup
    if args.which == "ds2":
        if not args.pair_with:
            raise UsageError("--which ds2 requires --pair-with <ds1 file>")
        partners = ds.load_dataset(args.pair_with)
        if not partners:
            raise EmptyInput(f"{args.pair_with} holds no records")
        if args.n is not None:
            partners = [r for r in partners if r.sample_id < args.n]
        seed = d.seed if args.seed is None else args.seed
    else:
        if args.n is None:
            raise UsageError(f"--which {args.which} requires --n")
        seed = (d.validation_seed if args.which == "validation" else d.seed) if args.seed is None else args.seed

    prov = _provenance(cfg, seed)
    out = Path(args.out)
    start = _resume_point(out, prov, args.which, d.chunk_size) if args.resume else 0
    if args.which == "ds1":
        draws = ds.draws_ds1(args.n, setup, d.p_ref_dbm, d.ripple_db, d.pump_max_w, seed, start)
    elif args.which == "ds2":
        draws = ds.draws_ds2(partners, setup, d.ds2_totals_dbm, d.ripple_db, seed, start)
    else:
        draws = ds.draws_validation(args.n, setup, d.validation_totals_dbm, d.ripple_db,
                                    d.pump_max_w, seed, start)
    if start == 0:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text("", encoding="utf-8")

    def progress(done, total):
        log.info("%s: %d/%d records labelled", args.which, start + done, start + total)

    for chunk in ds.label_draws(draws, setup, d.chunk_size, prov, progress):
        ds.save_dataset(chunk, out, append=True)
    return EXIT_OK


def _load_model(path):
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: malformed model bundle ({exc.msg})") from None
    kind = obj.get("kind")
    if kind == "greybox":
        return GreyboxModel.from_dict(obj)
    if kind == "conventional":
        return BaselineModel.from_dict(obj)
    raise SchemaError(f"{path}: unknown model kind {kind!r}")


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    seed = cfg.evaluation.seed if args.seed is None else args.seed
    ds1 = ds.load_dataset(args.ds1)
    ds2 = ds.load_dataset(args.ds2)
    if not ds1 or not ds2:
        raise EmptyInput("training needs nonempty ds1 and ds2 files")
    size = args.size or len(ds1)
    ids = nested_subset_ids(ds1, size, seed)
    tr, te = budget_split(ids, seed, cfg.training.train_fraction)
    t = cfg.training
    if args.method == "greybox":
        model = train_greybox(ds1, ds2, tr, te, t.nn1, t.nn2, cfg.dataset.p_ref_dbm, cfg.grid,
                              cfg.pumps.wavelengths_nm, (0.0, cfg.dataset.pump_max_w), t.label_source)
    else:
        ds.pair_ds2(ds1, ds2)
        tr_s, te_s = set(tr), set(te)
        conv_tr = [r for r in ds1 if r.sample_id in tr_s] + [r for r in ds2 if r.partner_id in tr_s]
        conv_te = [r for r in ds1 if r.sample_id in te_s] + [r for r in ds2 if r.partner_id in te_s]
        model = train_conventional(conv_tr, conv_te, t.conventional, cfg.grid, cfg.pumps.wavelengths_nm)
    model.provenance = _provenance(cfg, seed)
    model.metrics["dataset_size"] = size
    _write_atomic(args.out_model, json.dumps(model.to_dict(), sort_keys=True))
    print(json.dumps({"method": args.method, "param_count": model.param_count(), **model.metrics},
                     sort_keys=True))
    return EXIT_OK


def _read_profile(path) -> np.ndarray:
    text = Path(path).read_text(encoding="utf-8")
    try:
        obj = json.loads(text)
    except json.JSONDecodeError:
        try:
            return np.array([float(v) for v in text.replace(",", " ").split()])
        except ValueError:
            raise SchemaError(f"{path}: expected JSON or whitespace/comma separated dBm values") from None
    if isinstance(obj, dict):
        obj = obj.get("launch_dbm", obj.get("per_channel_dbm"))
    if not isinstance(obj, list):
        raise SchemaError(f"{path}: no launch_dbm list found")
    return np.asarray(obj, dtype=float)


def cmd_predict(args) -> int:
    model = _load_model(args.model)
    pumps = np.asarray(args.pumps, dtype=float)
    if pumps.size != len(model.pump_wavelengths_nm):
        raise UsageError(f"--pumps needs {len(model.pump_wavelengths_nm)} values, got {pumps.size}")
    if isinstance(model, GreyboxModel):
        if args.profile:
            raise UsageError("the greybox model uses only the total launch power; drop --profile")
        if args.total_dbm is None:
            raise UsageError("--total-dbm is required for a greybox model")
        gain = predict(model, pumps, args.total_dbm)
        result = {"model_kind": "greybox", "total_dbm": args.total_dbm,
                  "extrapolation": model.extrapolates(pumps)}
    else:
        if not args.profile:
            raise UsageError("the conventional model needs the per-channel launch profile (--profile)")
        launch = _read_profile(args.profile)
        gain = predict_conventional(model, pumps, launch)
        result = {"model_kind": "conventional", "total_dbm": ds.LaunchProfile(launch).total_dbm}
    result.update(pump_powers_w=pumps.tolist(), net_gain_db=gain.tolist())
    _emit(result, args.out)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config)
    seed = cfg.evaluation.seed if args.seed is None else args.seed
    validation = ds.load_dataset(args.validation)
    if not validation:
        raise EmptyInput(f"{args.validation} holds no validation records")
    if not args.models and not args.sizes:
        raise UsageError("give --models to score trained models or --sizes to run a sweep")
    reports = []
    for path in args.models or []:
        model = _load_model(path)
        size = int(model.metrics.get("dataset_size", 0))
        reports.append(evaluate_model(model, validation, size, seed, cfg.digest()))
    if args.sizes:
        if not args.ds1 or not args.ds2:
            raise UsageError("a --sizes sweep needs --ds1 and --ds2")
        ds1 = ds.load_dataset(args.ds1)
        ds2 = ds.load_dataset(args.ds2)
        reports += sweep(ds1, ds2, validation, args.sizes, seed, cfg.sweep_settings, cfg.digest(),
                         progress=lambda s, _: log.info("sweep size %d done", s))
    write_report(reports, args.out_dir, _provenance(cfg, seed))
    for r in reports:
        print(f"{r.method_tag:>12} size={r.dataset_size:<4} mean={r.mean_rmse_db:.4f} dB "
              f"p90={r.percentile_90_db:.4f} dB max={r.max_rmse_db:.4f} dB")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="greyraman", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run the SRS oracle once")
    s.add_argument("--config")
    s.add_argument("--pumps", type=_floats, required=True, help="pump powers in W, comma separated")
    s.add_argument("--total-dbm", type=float, default=14.0)
    s.add_argument("--ripple-db", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("gen-data", help="generate a labelled data set")
    s.add_argument("--config")
    s.add_argument("--which", choices=ds.TAGS, required=True)
    s.add_argument("--n", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--pair-with", help="ds1 file whose pump powers ds2 reuses")
    s.add_argument("--out", required=True)
    s.add_argument("--resume", action="store_true", help="continue a partially written file")
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("train", help="train a greybox or conventional model")
    s.add_argument("--method", choices=("greybox", "conventional"), required=True)
    s.add_argument("--ds1", required=True)
    s.add_argument("--ds2", required=True)
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--size", type=int, help="use a nested subset of this many ds1 records")
    s.add_argument("--out-model", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", help="predict a gain profile with a trained model")
    s.add_argument("--model", required=True)
    s.add_argument("--pumps", type=_floats, required=True)
    s.add_argument("--total-dbm", type=float)
    s.add_argument("--profile", help="per-channel launch profile file (conventional only)")
    s.add_argument("--out")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("evaluate", help="score models or run the data-set-size sweep")
    s.add_argument("--config")
    s.add_argument("--validation", required=True)
    s.add_argument("--models", nargs="+")
    s.add_argument("--sizes", nargs="+", type=int)
    s.add_argument("--ds1")
    s.add_argument("--ds2")
    s.add_argument("--seed", type=int)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, SchemaError, EmptyInput, UnpairedRecord,
            DimensionMismatch, ValueError) as exc:
        print(f"greyraman: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NonConvergence, NumericBlowup, RankDeficient) as exc:
        print(f"greyraman: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"greyraman: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
