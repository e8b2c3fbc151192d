"""Command-line pipeline: gen, train, eval, report, inspect.

Every command reads one JSON config (defaults reproduce the desk-scale
experiment), applies flag overrides, and copies the effective config
into its output directory.  Exit codes: 0 success, 1 runtime failure,
2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .config import (
    ConfigError,
    ExperimentConfig,
    load_config,
    save_config,
)
from .dataset import DatasetError, build_bank, load_dataset, save_dataset
from .encoding import EncodingError, grey_to_pgm
from .evaluation import (
    EvaluationError,
    evaluate_bank,
    example_report,
    write_example,
    write_figure9,
    write_table2,
)
from .geometry import GeometryError, build_datum, generate_library
from .models import (
    Hyper,
    TrainingError,
    conv_layer_indices,
    count_activated,
    inspect_activations,
    load_bank,
    save_bank,
    train_bank,
)
from .nn import NNError
from .panel import SolverError, solve_cascade

_RUNTIME_ERRORS = (
    ConfigError,
    DatasetError,
    EncodingError,
    EvaluationError,
    GeometryError,
    NNError,
    SolverError,
    TrainingError,
    OSError,
)


def _load_effective_config(args) -> ExperimentConfig:
    if getattr(args, "config", None):
        return load_config(args.config)
    return ExperimentConfig()


def _prepare_out(args, config: ExperimentConfig) -> str:
    out = args.out
    os.makedirs(out, exist_ok=True)
    save_config(config, os.path.join(out, "config.json"))
    return out


def _solve_one(task):
    profile, flow = task
    try:
        return profile.blade_id, solve_cascade(profile, flow), None
    except (SolverError, FloatingPointError, np.linalg.LinAlgError) as err:
        return profile.blade_id, None, str(err)


def _cmd_gen(args) -> int:
    config = _load_effective_config(args)
    if args.count is not None:
        if args.count < 1:
            raise ConfigError(f"--count must be positive: {args.count}")
        from dataclasses import replace

        config = replace(config, sweep=replace(config.sweep, count=args.count))
    out = _prepare_out(args, config)

    datum = build_datum(config.datum)
    grid = config.sweep.to_grid()
    profiles, geo_skipped = generate_library(
        datum, grid, config.sweep.seed, count=config.sweep.count
    )
    print(f"library: {len(profiles)} blades ({len(geo_skipped)} invalid geometries)")

    tasks = [(p, config.flow) for p in profiles]
    failures: list[tuple[int, str]] = []
    kept_profiles, cps = [], []
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_solve_one, tasks, chunksize=8))
    else:
        results = [_solve_one(t) for t in tasks]
    for profile, (blade_id, dist, err) in zip(profiles, results):
        if err is not None:
            failures.append((blade_id, err))
            continue
        kept_profiles.append(profile)
        cps.append(dist)

    skip_path = os.path.join(out, "skips.csv")
    with open(skip_path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["blade_id", "stage", "reason"])
        for blade_id in geo_skipped:
            writer.writerow([blade_id, "geometry", "sides cross"])
        for blade_id, why in failures:
            writer.writerow([blade_id, "solver", why])

    # Invalid geometry combinations are an expected, logged part of the
    # sweep; only solver failures count against the abort limit.
    if profiles and len(failures) > 0.01 * len(profiles):
        print(
            f"error: solver failed on {len(failures)} of {len(profiles)} blades "
            f"(limit 1%); see {skip_path}",
            file=sys.stderr,
        )
        return 1

    bank = build_bank(
        kept_profiles,
        cps,
        split_seed=config.split_seed,
        interval=config.label_interval,
        skipped_ids=sorted(geo_skipped + [b for b, _ in failures]),
    )
    path = os.path.join(out, "dataset.bldn")
    save_dataset(bank, path)
    counts = {s: bank.split_ids(s).size for s in ("train", "validation", "test")}
    print(f"dataset: {path} ({bank.count} blades, splits {counts})")
    if failures:
        print(f"solver failures: {len(failures)} (see {skip_path})")
    return 0


def _dataset_hash(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _bank_dir(out: str, arch: str, depth: int) -> str:
    return os.path.join(out, f"bank_{arch}_d{depth}")


def _cmd_train(args) -> int:
    config = _load_effective_config(args)
    out = _prepare_out(args, config)
    bank = load_dataset(args.dataset)
    tc = config.train
    hyper = Hyper(
        optimizer=tc.optimizer,
        lr=tc.lr,
        momentum=tc.momentum,
        batch_size=tc.batch_size,
        max_epochs=tc.max_epochs,
        patience=tc.patience,
    )
    if args.arch:
        choices = [(args.arch, args.depth if args.depth else 16)]
    else:
        choices = [(c.arch, c.depth) for c in tc.architectures]
    data_hash = _dataset_hash(args.dataset)
    for arch, depth in choices:
        print(f"training {arch} depth {depth}")
        cbank = train_bank(
            bank,
            arch,
            hyper,
            tc.master_seed,
            conv_depth=depth,
            fc_hidden=tc.fc_hidden,
            keep_prob=tc.keep_prob,
            progress=lambda sm: print(
                f"  {sm.name}: {len(sm.curve)} epochs, "
                f"best val {max(c['val_accuracy'] for c in sm.curve):.4f}"
            ),
        )
        target = _bank_dir(out, arch, depth)
        save_bank(cbank, target, dataset_hash=data_hash)
        print(f"saved {target}")
    return 0


def _cmd_eval(args) -> int:
    config = _load_effective_config(args)
    out = _prepare_out(args, config)
    dbank = load_dataset(args.dataset)
    entries = []
    results = []
    for bank_dir in args.bank:
        cbank = load_bank(bank_dir)
        result = evaluate_bank(cbank, dbank, split=args.split)
        entries.append((cbank.arch_kind, cbank.conv_depth, result))
        results.append((cbank, result))
        print(
            f"{cbank.arch_kind} d{cbank.conv_depth} [{args.split}]: "
            f"within 1% {result.within_1pct:.4f}, within 3% {result.within_3pct:.4f} "
            f"(uniform {result.uniform_within_1pct:.4f} / "
            f"{result.uniform_within_3pct:.4f})"
        )
    write_table2(os.path.join(out, "table2.csv"), entries)
    if len(results) == 1:
        write_figure9(os.path.join(out, "figure9.csv"), results[0][1])
    else:
        for cbank, result in results:
            name = f"figure9_{cbank.arch_kind}_d{cbank.conv_depth}.csv"
            write_figure9(os.path.join(out, name), result)
    return 0


def _cmd_report(args) -> int:
    config = _load_effective_config(args)
    out = _prepare_out(args, config)
    dbank = load_dataset(args.dataset)
    cbank = load_bank(args.bank)
    rows = example_report(cbank, dbank, args.blade)
    path = os.path.join(out, f"example_{args.blade}.csv")
    write_example(path, rows)
    exact = sum(1 for r in rows if r["error_class"] == "1%")
    print(f"{path}: {exact}/18 stations exact")
    return 0


def _cmd_inspect(args) -> int:
    config = _load_effective_config(args)
    out = _prepare_out(args, config)
    dbank = load_dataset(args.dataset)
    cbank = load_bank(args.bank)
    side, _, cx_text = args.station.rpartition("_")
    try:
        cx = float(cx_text)
    except ValueError:
        raise ConfigError(f"bad station {args.station!r}; want side_cx") from None
    sm = cbank.station(side, cx)
    convs = conv_layer_indices(sm.model)
    if not convs:
        raise TrainingError(f"{cbank.arch_kind} has no convolutional layers")
    if args.layer == "first":
        ordinal = 0
    elif args.layer == "last":
        ordinal = len(convs) - 1
    else:
        try:
            ordinal = int(args.layer)
        except ValueError:
            raise ConfigError(
                f"--layer must be first, last, or an integer: {args.layer!r}"
            ) from None
    pos = dbank.blade_position(args.blade)
    maps, _ = inspect_activations(sm.model, sm.centered(dbank.matrices[pos]), ordinal)
    peak = float(maps.max())
    scale = peak if peak > 0.0 else 1.0
    for i in range(maps.shape[0]):
        name = f"feature_{sm.name}_conv{ordinal}_{i:02d}.pgm"
        with open(os.path.join(out, name), "wb") as f:
            f.write(grey_to_pgm(maps[i] / scale))
    count = count_activated(maps, args.fraction)
    print(
        f"blade {args.blade} station {sm.name} conv {ordinal}: "
        f"{maps.shape[0]} maps of {maps.shape[1]}x{maps.shape[2]}, "
        f"{count} cells above {args.fraction:.2f} of peak"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bladecp",
        description="Blade-library generation, Cp solving, and per-station "
        "label classifiers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate library, solve flows, build dataset")
    p.add_argument("--config", help="experiment config JSON")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--count", type=int, default=None, help="override library size")
    p.add_argument("--jobs", type=int, default=1, help="parallel solver workers")
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("train", help="train classifier banks")
    p.add_argument("--config", help="experiment config JSON")
    p.add_argument("--dataset", required=True, help="dataset file from gen")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--arch", choices=("nn2", "cnn2_nn2", "cnn4_nn2"))
    p.add_argument("--depth", type=int, default=None, help="conv kernel depth")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="score banks, write table2/figure9 CSVs")
    p.add_argument("--config", help="experiment config JSON")
    p.add_argument("--dataset", required=True)
    p.add_argument("--bank", action="append", required=True, help="bank directory")
    p.add_argument("--split", default="test", choices=("train", "validation", "test"))
    p.add_argument("--out", default="out")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("report", help="per-station example report for one blade")
    p.add_argument("--config", help="experiment config JSON")
    p.add_argument("--dataset", required=True)
    p.add_argument("--bank", required=True)
    p.add_argument("--blade", type=int, required=True)
    p.add_argument("--out", default="out")
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("inspect", help="dump feature maps and activation counts")
    p.add_argument("--config", help="experiment config JSON")
    p.add_argument("--dataset", required=True)
    p.add_argument("--bank", required=True)
    p.add_argument("--blade", type=int, default=0)
    p.add_argument("--station", default="suction_0.40", help="side_cx, e.g. suction_0.40")
    p.add_argument("--layer", default="last", help="conv ordinal, or first/last")
    p.add_argument("--fraction", type=float, default=0.5, help="activation threshold")
    p.add_argument("--out", default="out")
    p.set_defaults(func=_cmd_inspect)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _RUNTIME_ERRORS as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
