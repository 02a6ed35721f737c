"""Config-driven batch entry point.

Verbs: gen-data, run, ablate, verify, report.  A single JSON config with
top-level keys {world, sequence, strategy, pretune, train, report} drives
everything; unknown keys are hard errors.  Outputs are plain CSV plus a
fully resolved config echo that reproduces the run when fed back in.

Exit codes: 0 success, 1 failed verification, 2 invalid config,
3 numeric failure.
"""

import argparse
import csv
import json
import os
import sys
import time
from dataclasses import asdict

from .errors import ConfigError, DataError, NumericError, ShapeError
from .nest import PretuneConfig
from .synthdata import TaskSequence, WorldSpec, build_world, dump_images
from .trainer import ExperimentConfig, run_experiment

_TOP_KEYS = ("world", "sequence", "strategy", "pretune", "train", "report")

_WORLD_DEFAULTS = {
    "num_classes": 10,
    "feature_dim": 16,
    "prototype_rule": "mixture",
    "mixture_beta": 0.3,
    "mixture_classes": [7, 8, 9, 10],
    "noise_sigma": 0.3,
    "height": 16,
    "width": 16,
    "blobs_min": 2,
    "blobs_max": 5,
    "images_per_class": 20,
    "test_images_per_class": 5,
    "seed": 1,
}
_SEQUENCE_DEFAULTS = {
    "class_order": None,  # defaults to 1..K
    "base_count": 6,
    "increment": 1,
    "setting": "overlapped",
}
_PRETUNE_DEFAULTS = {
    "epochs": 30,
    "lr": 0.3,
    "batch_size": 8,
    "weight_align": True,
    "use_pretuned_bg": False,
}
_TRAIN_DEFAULTS = {
    "backbone_dim": 16,
    "base_epochs": 60,
    "base_lr": 0.2,
    "inc_epochs": 10,
    "inc_lr": 0.005,
    "batch_size": 8,
    "lambda_kd": 1.0,
    "fix_old_classifiers": False,
    "poly_power": 0.0,
    "use_bias": False,
    "seeds": [1],
}
_REPORT_DEFAULTS = {"out_dir": "out", "run_id": "run", "timing": False}

RESULT_COLUMNS = ("run_id", "strategy", "seed", "step", "miou_base", "miou_new", "miou_all", "wall_seconds")
CURVE_COLUMNS = ("run_id", "step", "epoch", "loss_mean", "loss_std", "featsim_mean", "featsim_std")


def _merge_section(name, defaults, given):
    if given is None:
        return dict(defaults)
    if not isinstance(given, dict):
        raise ConfigError(f"section {name!r} must be an object")
    unknown = set(given) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown key {sorted(unknown)[0]!r} in section {name!r}")
    merged = dict(defaults)
    merged.update(given)
    return merged


def load_config(path):
    """Parse and validate a config file; returns the resolved dict."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}:{e.colno}: {e.msg}")
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    unknown = set(raw) - set(_TOP_KEYS)
    if unknown:
        raise ConfigError(f"{path}: unknown top-level key {sorted(unknown)[0]!r}")

    resolved = {
        "world": _merge_section("world", _WORLD_DEFAULTS, raw.get("world")),
        "sequence": _merge_section("sequence", _SEQUENCE_DEFAULTS, raw.get("sequence")),
        "strategy": raw.get("strategy", "nest:similarity:both"),
        "pretune": _merge_section("pretune", _PRETUNE_DEFAULTS, raw.get("pretune")),
        "train": _merge_section("train", _TRAIN_DEFAULTS, raw.get("train")),
        "report": _merge_section("report", _REPORT_DEFAULTS, raw.get("report")),
    }
    if resolved["sequence"]["class_order"] is None:
        resolved["sequence"]["class_order"] = list(range(1, resolved["world"]["num_classes"] + 1))
    return resolved


def _experiment_config(resolved, strategy, seed):
    w = dict(resolved["world"])
    w["mixture_classes"] = tuple(w["mixture_classes"])
    world = WorldSpec(**w)
    s = dict(resolved["sequence"])
    s["class_order"] = tuple(s["class_order"])
    sequence = TaskSequence(**s)
    sequence.validate(world.num_classes)
    pretune = PretuneConfig(**resolved["pretune"])
    t = resolved["train"]
    return ExperimentConfig(
        world=world,
        sequence=sequence,
        strategy=strategy,
        pretune=pretune,
        backbone_dim=t["backbone_dim"],
        base_epochs=t["base_epochs"],
        base_lr=t["base_lr"],
        inc_epochs=t["inc_epochs"],
        inc_lr=t["inc_lr"],
        batch_size=t["batch_size"],
        lambda_kd=t["lambda_kd"],
        fix_old_classifiers=t["fix_old_classifiers"],
        poly_power=t["poly_power"],
        use_bias=t["use_bias"],
        seed=seed,
    )


def _fmt(x):
    return f"{x:.6f}"


def _write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        writer.writerows(rows)


def _run_one(resolved, strat, seed):
    """One experiment; returns (result_rows, curve_rows) for that run."""
    timing = resolved["report"]["timing"]
    run_id = f"{resolved['report']['run_id']}-{strat.replace(':', '_')}-s{seed}"
    cfg = _experiment_config(resolved, strat, seed)
    result = run_experiment(cfg)
    result_rows, curve_rows = [], []
    for rep in result.reports:
        wall = rep.wall_seconds if timing else 0.0
        result_rows.append(
            (run_id, strat, seed, rep.step, _fmt(rep.miou_base), _fmt(rep.miou_new), _fmt(rep.miou_all), _fmt(wall))
        )
        for e, st in enumerate(rep.epochs):
            curve_rows.append(
                (run_id, rep.step, e, _fmt(st.loss_mean), _fmt(st.loss_std), _fmt(st.featsim_mean), _fmt(st.featsim_std))
            )
    return result_rows, curve_rows


def execute_runs(resolved, out_dir):
    """Run (strategy x seed) experiments; returns result and curve rows.

    NEST_LAB_THREADS > 1 runs independent experiments in worker processes;
    rows are merged in job order so output stays deterministic.
    """
    strategies = resolved["strategy"]
    if isinstance(strategies, str):
        strategies = [strategies]
    seeds = resolved["train"]["seeds"]
    jobs = [(strat, seed) for strat in strategies for seed in seeds]

    workers = int(os.environ.get("NEST_LAB_THREADS", "1"))
    if workers > 1 and len(jobs) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(_run_one, [resolved] * len(jobs), *zip(*jobs)))
    else:
        outputs = [_run_one(resolved, strat, seed) for strat, seed in jobs]

    result_rows, curve_rows = [], []
    for rr, cr in outputs:
        result_rows.extend(rr)
        curve_rows.extend(cr)
    return result_rows, curve_rows


def cmd_run(config_path, out_dir):
    resolved = load_config(config_path)
    out_dir = out_dir or resolved["report"]["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    result_rows, curve_rows = execute_runs(resolved, out_dir)
    _write_csv(os.path.join(out_dir, "results.csv"), RESULT_COLUMNS, result_rows)
    _write_csv(os.path.join(out_dir, "curves.csv"), CURVE_COLUMNS, curve_rows)
    with open(os.path.join(out_dir, "config.echo.json"), "w") as fh:
        json.dump(resolved, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return 0


def cmd_ablate(config_path, out_dir):
    import statistics

    resolved = load_config(config_path)
    out_dir = out_dir or resolved["report"]["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    strategies = resolved["strategy"]
    if isinstance(strategies, str):
        strategies = [strategies]

    result_rows, curve_rows = execute_runs(resolved, out_dir)
    _write_csv(os.path.join(out_dir, "results.csv"), RESULT_COLUMNS, result_rows)
    _write_csv(os.path.join(out_dir, "curves.csv"), CURVE_COLUMNS, curve_rows)

    # aggregate the final step of every run, per strategy
    agg_rows = []
    last_step = max(int(r[3]) for r in result_rows)
    for strat in strategies:
        finals = [r for r in result_rows if r[1] == strat and int(r[3]) == last_step]
        cols = []
        for idx in (4, 5, 6):  # miou_base, miou_new, miou_all
            vals = [float(r[idx]) for r in finals]
            mean = statistics.fmean(vals)
            std = statistics.pstdev(vals) if len(vals) > 1 else 0.0
            cols.extend([_fmt(mean), _fmt(std)])
        agg_rows.append((strat, *cols))
    _write_csv(
        os.path.join(out_dir, "ablation.csv"),
        ("strategy", "miou_base_mean", "miou_base_std", "miou_new_mean", "miou_new_std", "miou_all_mean", "miou_all_std"),
        agg_rows,
    )
    with open(os.path.join(out_dir, "config.echo.json"), "w") as fh:
        json.dump(resolved, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return 0


def cmd_gen_data(config_path, out_dir):
    resolved = load_config(config_path)
    out_dir = out_dir or resolved["report"]["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    cfg = _experiment_config(resolved, "background", resolved["train"]["seeds"][0])
    world = build_world(cfg.world)
    dump_images(world.train_pool, os.path.join(out_dir, "train.jsonl"))
    dump_images(world.test_pool, os.path.join(out_dir, "test.jsonl"))
    return 0


def cmd_verify():
    from .verify import run_all

    start = time.perf_counter()
    ok = run_all()
    print(f"verify finished in {time.perf_counter() - start:.1f}s")
    return 0 if ok else 1


def cmd_report(inputs, out_path):
    rows = []
    for path in inputs:
        candidate = path if path.endswith(".csv") else os.path.join(path, "results.csv")
        with open(candidate, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if tuple(header) != RESULT_COLUMNS:
                raise ConfigError(f"{candidate}: unexpected columns {header}")
            rows.extend(tuple(r) for r in reader)
    _write_csv(out_path, RESULT_COLUMNS, rows)
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(prog="nestlab", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)

    p_run = sub.add_parser("run", help="run the configured experiment(s)")
    p_run.add_argument("config")
    p_run.add_argument("-o", "--out-dir", default=None)

    p_abl = sub.add_parser("ablate", help="run strategies x seeds and aggregate")
    p_abl.add_argument("config")
    p_abl.add_argument("-o", "--out-dir", default=None)

    p_gen = sub.add_parser("gen-data", help="dump the synthetic image pools")
    p_gen.add_argument("config")
    p_gen.add_argument("-o", "--out-dir", default=None)

    sub.add_parser("verify", help="run the verification suite")

    p_rep = sub.add_parser("report", help="merge results.csv files")
    p_rep.add_argument("inputs", nargs="+")
    p_rep.add_argument("-o", "--out", default="merged.csv")

    args = parser.parse_args(argv)
    try:
        if args.verb == "run":
            return cmd_run(args.config, args.out_dir)
        if args.verb == "ablate":
            return cmd_ablate(args.config, args.out_dir)
        if args.verb == "gen-data":
            return cmd_gen_data(args.config, args.out_dir)
        if args.verb == "verify":
            return cmd_verify()
        if args.verb == "report":
            return cmd_report(args.inputs, args.out)
    except (ConfigError, DataError, ShapeError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
