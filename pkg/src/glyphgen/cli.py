"""Command-line entry point for batch experiment runs.

Subcommands: preprocess, split, train, hp-search, eval, ttest, sample,
classifier-train, neighbors, grid.  Flag values win over config-file
values, which win over defaults; the effective configuration and an
equivalent argv are echoed into a run manifest so any run can be
repeated from its manifest alone.  Commands writing into an output
directory put exactly one ``manifest.json`` there; single-file outputs
get a ``<file>.manifest.json`` sidecar.

Failures map to a one-line ``error:<category>: <message>`` on stderr
with exit code 1; bad usage exits 2.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    PreprocessConfig,
    SplitSpec,
    load_corpus,
    load_processed,
    make_splits,
    preprocess_corpus,
    save_processed,
)
from .errors import ConfigError, GlyphgenError
from .evaluation import (
    ClassifierConfig,
    EvalReport,
    arrange_grid,
    build_index,
    evaluate,
    load_classifier,
    nearest_neighbors,
    paired_t_test,
    save_classifier,
    summary_table,
    train_classifier,
)
from .models import ModelConfig, build_model
from .render import render_drawing, save_pgm, tile_canvases
from .splines import SplineStroke
from .training import TrainConfig, hp_search, load_checkpoint, save_checkpoint, train

_FLAG_ALIAS = {"input": "--in", "output": "--out", "eval_input": "--eval-in"}


class UsageError(Exception):
    """Required options missing after merging flags and config file."""


def _flag(dest: str) -> str:
    return _FLAG_ALIAS.get(dest, "--" + dest.replace("_", "-"))


def _effective(args: argparse.Namespace, defaults: dict) -> dict:
    """Merge defaults, config-file values, and explicit flags (strongest)."""
    from_file = {}
    config_path = getattr(args, "config", None)
    if config_path:
        with open(config_path) as f:
            loaded = json.load(f)
        unknown = set(loaded) - set(defaults)
        if unknown:
            raise ConfigError(f"unknown config file keys: {sorted(unknown)}")
        from_file = loaded
    merged = dict(defaults)
    merged.update(from_file)
    for dest in defaults:
        value = getattr(args, dest, None)
        if value is not None:
            merged[dest] = value
    if "seed" in merged and merged["seed"] is None:
        merged["seed"] = int(os.environ.get("GLYPHGEN_SEED", "0"))
    missing = [dest for dest, v in merged.items() if v is _REQUIRED]
    if missing:
        raise UsageError(f"missing required options: {' '.join(_flag(d) for d in missing)}")
    return merged


class _Required:
    def __repr__(self):
        return "<required>"


_REQUIRED = _Required()


def _argv_effective(command: str, eff: dict) -> list[str]:
    argv = [command]
    for dest, value in eff.items():
        if value is None:
            continue
        flag = _flag(dest)
        if isinstance(value, (list, tuple)):
            if dest == "fold":
                for item in value:
                    argv += [flag, str(item)]
            else:
                argv += [flag, ",".join(str(v) for v in value)]
        elif isinstance(value, dict):
            argv += [flag, json.dumps(value, sort_keys=True)]
        else:
            argv += [flag, str(value)]
    return argv


def _write_manifest(target, command: str, eff: dict, inputs: list, outputs: list,
                    started: float) -> None:
    target = Path(target)
    if target.is_dir() or not target.suffix:
        target.mkdir(parents=True, exist_ok=True)
        path = target / "manifest.json"
    else:
        path = target.with_name(target.name + ".manifest.json")
    manifest = {
        "command": command,
        "argv_effective": _argv_effective(command, eff),
        "config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in eff.items()},
        "seed": eff.get("seed"),
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "tool_version": __version__,
        "started": started,
        "finished": time.time(),
    }
    path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")


def _out_dir(eff: dict) -> Path:
    out = Path(eff["output"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _render_pixels(strokes) -> np.ndarray:
    return render_drawing(strokes).pixels


def _record_canvases(records) -> list[np.ndarray]:
    return [_render_pixels(r.strokes) for r in records]


def _load_samples(path) -> list[list[SplineStroke]]:
    with open(path) as f:
        payload = json.load(f)
    drawings = []
    for sample in payload["samples"]:
        drawings.append(
            [SplineStroke(start=s["start"], offsets=s["offsets"]) for s in sample["strokes"]]
        )
    return drawings


# -- subcommands -----------------------------------------------------------------


PREPROCESS_DEFAULTS = dict(
    input=_REQUIRED, output=_REQUIRED, residual_thresh=1.5, min_length=10.0,
    max_control_points=30, threads=1,
)


def cmd_preprocess(args) -> int:
    started = time.time()
    eff = _effective(args, PREPROCESS_DEFAULTS)
    records = load_corpus(eff["input"])
    cfg = PreprocessConfig(
        min_length=eff["min_length"],
        residual_threshold=eff["residual_thresh"],
        max_control_points=eff["max_control_points"],
    )
    processed, stats = preprocess_corpus(records, cfg, threads=eff["threads"])
    save_processed(processed, eff["output"])
    _write_manifest(eff["output"], "preprocess", eff, [eff["input"]], [eff["output"]], started)
    print(
        f"kept {stats.records_kept}/{stats.records_in} drawings, "
        f"dropped {stats.strokes_dropped}/{stats.strokes_in} strokes"
    )
    return 0


SPLIT_DEFAULTS = dict(
    input=_REQUIRED, mode=_REQUIRED, fold=1, seed=None, train_frac=0.8,
    train_out=_REQUIRED, test_out=_REQUIRED, eval_input=None,
)


def cmd_split(args) -> int:
    started = time.time()
    eff = _effective(args, SPLIT_DEFAULTS)
    records = load_processed(eff["input"])
    eval_records = load_processed(eff["eval_input"]) if eff["eval_input"] else None
    spec = SplitSpec(mode=eff["mode"], fold=eff["fold"], seed=eff["seed"],
                     train_fraction=eff["train_frac"])
    train_set, test_set = make_splits(records, spec, eval_records=eval_records)
    save_processed(train_set, eff["train_out"])
    save_processed(test_set, eff["test_out"])
    inputs = [eff["input"]] + ([eff["eval_input"]] if eff["eval_input"] else [])
    _write_manifest(eff["train_out"], "split", eff, inputs,
                    [eff["train_out"], eff["test_out"]], started)
    print(f"{len(train_set)} train / {len(test_set)} test drawings")
    return 0


TRAIN_DEFAULTS = dict(
    kind=_REQUIRED, input=_REQUIRED, output=_REQUIRED, model_json=None,
    steps=1000, batch_size=200, lr=1e-3, eval_every=100, clip_norm=5.0, seed=None,
)


def cmd_train(args) -> int:
    started = time.time()
    eff = _effective(args, TRAIN_DEFAULTS)
    records = load_processed(eff["input"])
    overrides = json.loads(eff["model_json"]) if isinstance(eff["model_json"], str) else (eff["model_json"] or {})
    model_cfg = ModelConfig.from_dict({"kind": eff["kind"], **overrides})
    train_cfg = TrainConfig(
        batch_size=eff["batch_size"], learning_rate=eff["lr"], max_steps=eff["steps"],
        eval_every=eff["eval_every"], seed=eff["seed"], clip_norm=eff["clip_norm"],
    )
    model = build_model(model_cfg, seed=eff["seed"])
    out = _out_dir(eff)
    outputs = []
    final = None
    for ckpt in train(model, [r.strokes for r in records], train_cfg):
        path = out / f"checkpoint_{ckpt.step:06d}.ckpt"
        save_checkpoint(ckpt, path)
        outputs.append(path)
        final = ckpt
        print(f"step {ckpt.step}: loss {ckpt.loss_trace[-1]:.4f}")
    model_path = out / "model.ckpt"
    save_checkpoint(final, model_path)
    outputs.append(model_path)
    _write_manifest(out, "train", eff, [eff["input"]], outputs, started)
    return 0


HP_DEFAULTS = dict(
    kind=_REQUIRED, grid=_REQUIRED, fold=_REQUIRED, output=_REQUIRED,
    model_json=None, steps=200, batch_size=200, lr=1e-3, eval_every=100, clip_norm=5.0,
    seed=None,
)


def cmd_hp_search(args) -> int:
    started = time.time()
    eff = _effective(args, HP_DEFAULTS)
    with open(eff["grid"]) as f:
        grid = json.load(f)
    if not isinstance(grid, list):
        raise ConfigError("grid file must hold a JSON list of override objects")
    overrides = json.loads(eff["model_json"]) if isinstance(eff["model_json"], str) else (eff["model_json"] or {})
    base = ModelConfig.from_dict({"kind": eff["kind"], **overrides})
    folds = []
    for pair in eff["fold"]:
        train_path, _, val_path = pair.partition(":")
        if not val_path:
            raise ConfigError(f"fold must look like TRAIN:VAL, got {pair!r}")
        folds.append(
            (
                [r.strokes for r in load_processed(train_path)],
                [r.strokes for r in load_processed(val_path)],
            )
        )
    train_cfg = TrainConfig(
        batch_size=eff["batch_size"], learning_rate=eff["lr"], max_steps=eff["steps"],
        eval_every=eff["eval_every"], seed=eff["seed"], clip_norm=eff["clip_norm"],
    )
    best_config, best_row, table = hp_search(base, grid, folds, train_cfg)
    out = _out_dir(eff)
    results = {
        "best_config": best_config.to_dict(),
        "best_id": best_row.config_id,
        "table": [
            {"config_id": r.config_id, "overrides": r.overrides,
             "fold_losses": r.fold_losses, "mean_loss": r.mean_loss}
            for r in table
        ],
    }
    results_path = out / "results.json"
    results_path.write_text(json.dumps(results, sort_keys=True, indent=2) + "\n")
    inputs = [eff["grid"]] + [p for pair in eff["fold"] for p in pair.split(":")]
    _write_manifest(out, "hp-search", eff, inputs, [results_path], started)
    print(f"best: {best_row.config_id} (mean loss {best_row.mean_loss:.4f})")
    return 0


EVAL_DEFAULTS = dict(
    ckpt=_REQUIRED, test=_REQUIRED, output=_REQUIRED, split=None, threads=1, seed=None,
)


def cmd_eval(args) -> int:
    started = time.time()
    eff = _effective(args, EVAL_DEFAULTS)
    ckpt = load_checkpoint(eff["ckpt"])
    model = ckpt.build_model()
    records = load_processed(eff["test"])
    report = evaluate(
        model,
        [r.strokes for r in records],
        model_id=ckpt.model_config.kind,
        split_id=eff["split"] or "test",
        threads=eff["threads"],
    )
    out = _out_dir(eff)
    report_path = out / "report.json"
    payload = report.to_dict()
    payload["drawing_ids"] = [r.key for r in records]
    report_path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    summary_path = out / "summary.txt"
    summary_path.write_text(summary_table([report]))
    _write_manifest(out, "eval", eff, [eff["ckpt"], eff["test"]],
                    [report_path, summary_path], started)
    print(f"{report.model_id} on {report.split_id}: mean NLL {report.mean_nll:.4f}")
    return 0


TTEST_DEFAULTS = dict(report_a=_REQUIRED, report_b=_REQUIRED, output=_REQUIRED)


def cmd_ttest(args) -> int:
    started = time.time()
    eff = _effective(args, TTEST_DEFAULTS)
    with open(eff["report_a"]) as f:
        a = EvalReport.from_dict(json.load(f))
    with open(eff["report_b"]) as f:
        b = EvalReport.from_dict(json.load(f))
    result = paired_t_test(a.nlls, b.nlls)
    out = _out_dir(eff)
    result_path = out / "ttest.json"
    payload = result.to_dict()
    payload["model_a"] = a.model_id
    payload["model_b"] = b.model_id
    result_path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    _write_manifest(out, "ttest", eff, [eff["report_a"], eff["report_b"]], [result_path], started)
    print(f"t({result.df}) = {result.t:.3f}, p = {result.p:.4g}")
    return 0


SAMPLE_DEFAULTS = dict(ckpt=_REQUIRED, output=_REQUIRED, n=36, temperature=1.0, seed=None)


def cmd_sample(args) -> int:
    started = time.time()
    eff = _effective(args, SAMPLE_DEFAULTS)
    ckpt = load_checkpoint(eff["ckpt"])
    model = ckpt.build_model()
    rng = np.random.default_rng(eff["seed"])
    out = _out_dir(eff)
    outputs = []
    samples = []
    for i in range(eff["n"]):
        strokes, canvas = model.generate(rng, temperature=eff["temperature"])
        pgm = out / f"sample_{i:03d}.pgm"
        save_pgm(canvas, pgm)
        outputs.append(pgm)
        samples.append(
            {
                "index": i,
                "pgm": pgm.name,
                "strokes": [
                    {
                        "stroke_index": j,
                        "start": stroke.start.tolist(),
                        "offsets": stroke.offsets.tolist(),
                    }
                    for j, stroke in enumerate(strokes)
                ],
            }
        )
    samples_path = out / "samples.json"
    samples_path.write_text(
        json.dumps(
            {
                "model": ckpt.model_config.kind,
                "temperature": eff["temperature"],
                "seed": eff["seed"],
                "samples": samples,
            },
            sort_keys=True,
            indent=2,
        )
        + "\n"
    )
    outputs.append(samples_path)
    _write_manifest(out, "sample", eff, [eff["ckpt"]], outputs, started)
    print(f"wrote {eff['n']} samples at T={eff['temperature']}")
    return 0


CLASSIFIER_DEFAULTS = dict(
    input=_REQUIRED, output=_REQUIRED, steps=300, batch_size=16, lr=1e-3,
    embed_units=64, filters=(16, 32, 32, 64), activation="tanh", seed=None,
)


def cmd_classifier_train(args) -> int:
    started = time.time()
    eff = _effective(args, CLASSIFIER_DEFAULTS)
    records = load_processed(eff["input"])
    examples = [(_render_pixels(r.strokes), r.class_key) for r in records]
    cfg = ClassifierConfig(
        filters=tuple(eff["filters"]), embed_units=eff["embed_units"],
        activation=eff["activation"], steps=eff["steps"], batch_size=eff["batch_size"],
        learning_rate=eff["lr"], seed=eff["seed"],
    )
    clf = train_classifier(examples, cfg)
    out = _out_dir(eff)
    clf_path = out / "classifier.npz"
    save_classifier(clf, clf_path)
    _write_manifest(out, "classifier-train", eff, [eff["input"]], [clf_path], started)
    print(f"trained {len(clf.labels)}-way classifier on {len(examples)} canvases")
    return 0


NEIGHBORS_DEFAULTS = dict(
    queries=_REQUIRED, train=_REQUIRED, clf=_REQUIRED, output=_REQUIRED, k=5,
)


def cmd_neighbors(args) -> int:
    started = time.time()
    eff = _effective(args, NEIGHBORS_DEFAULTS)
    clf = load_classifier(eff["clf"])
    train_records = load_processed(eff["train"])
    index = build_index(clf, _record_canvases(train_records),
                        [r.key for r in train_records], classifier_id=str(eff["clf"]))
    queries = [_render_pixels(d) for d in _load_samples(eff["queries"])]
    table = nearest_neighbors(queries, index, k=eff["k"], classifier=clf)
    out = _out_dir(eff)
    table_path = out / "neighbors.json"
    table_path.write_text(
        json.dumps(
            [
                {"query": qi, "neighbors": [{"id": nid, "distance": d} for nid, d in row]}
                for qi, row in enumerate(table)
            ],
            sort_keys=True,
            indent=2,
        )
        + "\n"
    )
    _write_manifest(out, "neighbors", eff, [eff["queries"], eff["train"], eff["clf"]],
                    [table_path], started)
    print(f"wrote {eff['k']} neighbors for {len(table)} queries")
    return 0


GRID_DEFAULTS = dict(samples=_REQUIRED, clf=_REQUIRED, output=_REQUIRED, train=None)


def cmd_grid(args) -> int:
    started = time.time()
    eff = _effective(args, GRID_DEFAULTS)
    clf = load_classifier(eff["clf"])
    drawings = _load_samples(eff["samples"])
    canvases = [_render_pixels(d) for d in drawings]
    index = None
    train_records = []
    if eff["train"]:
        train_records = load_processed(eff["train"])
        index = build_index(clf, _record_canvases(train_records),
                            [r.key for r in train_records], classifier_id=str(eff["clf"]))
    layout = arrange_grid(canvases, clf, index=index)
    out = _out_dir(eff)
    ordered = [canvases[i] for i in layout.order.reshape(-1)]
    grid_path = out / "grid.pgm"
    save_pgm(tile_canvases(ordered, columns=layout.size), grid_path)
    outputs = [grid_path]
    if index is not None:
        by_key = {r.key: r for r in train_records}
        neighbor_canvases = [
            _render_pixels(by_key[nid].strokes) for row in layout.neighbor_ids for nid in row
        ]
        neighbors_path = out / "grid_neighbors.pgm"
        save_pgm(tile_canvases(neighbor_canvases, columns=layout.size), neighbors_path)
        outputs.append(neighbors_path)
    layout_path = out / "layout.json"
    layout_path.write_text(json.dumps(layout.to_dict(), sort_keys=True, indent=2) + "\n")
    outputs.append(layout_path)
    inputs = [eff["samples"], eff["clf"]] + ([eff["train"]] if eff["train"] else [])
    _write_manifest(out, "grid", eff, inputs, outputs, started)
    print(f"arranged {len(canvases)} samples into a {layout.size}x{layout.size} grid")
    return 0


# -- parser / dispatch ----------------------------------------------------------------


def _comma_ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split(","))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="glyphgen", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"glyphgen {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="fit splines to a raw NDJSON corpus")
    p.add_argument("--in", dest="input")
    p.add_argument("--out", dest="output")
    p.add_argument("--residual-thresh", type=float, dest="residual_thresh")
    p.add_argument("--min-length", type=float, dest="min_length")
    p.add_argument("--max-control-points", type=int, dest="max_control_points")
    p.add_argument("--threads", type=int)
    p.add_argument("--config")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("split", help="deterministic train/test splits")
    p.add_argument("--in", dest="input")
    p.add_argument("--mode", choices=("character", "alphabet", "holdout"))
    p.add_argument("--fold", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--train-frac", type=float, dest="train_frac")
    p.add_argument("--train-out", dest="train_out")
    p.add_argument("--test-out", dest="test_out")
    p.add_argument("--eval-in", dest="eval_input")
    p.add_argument("--config")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train one generative model")
    p.add_argument("--kind", choices=("full_ns", "hlstm", "baseline"))
    p.add_argument("--in", dest="input")
    p.add_argument("--out", dest="output")
    p.add_argument("--model-json", dest="model_json", help="JSON object of model overrides")
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--lr", type=float)
    p.add_argument("--eval-every", type=int, dest="eval_every")
    p.add_argument("--clip-norm", type=float, dest="clip_norm")
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("hp-search", help="grid search over model overrides")
    p.add_argument("--kind", choices=("full_ns", "hlstm", "baseline"))
    p.add_argument("--grid", help="JSON list of override objects")
    p.add_argument("--fold", action="append", help="TRAIN:VAL processed corpora (repeatable)")
    p.add_argument("--out", dest="output")
    p.add_argument("--model-json", dest="model_json")
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--lr", type=float)
    p.add_argument("--eval-every", type=int, dest="eval_every")
    p.add_argument("--clip-norm", type=float, dest="clip_norm")
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    p.set_defaults(func=cmd_hp_search)

    p = sub.add_parser("eval", help="teacher-forced NLL report on a test corpus")
    p.add_argument("--ckpt")
    p.add_argument("--test")
    p.add_argument("--out", dest="output")
    p.add_argument("--split", help="split label recorded in the report")
    p.add_argument("--threads", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ttest", help="paired t-test between two eval reports")
    p.add_argument("--report-a", dest="report_a")
    p.add_argument("--report-b", dest="report_b")
    p.add_argument("--out", dest="output")
    p.add_argument("--config")
    p.set_defaults(func=cmd_ttest)

    p = sub.add_parser("sample", help="draw characters from a checkpoint")
    p.add_argument("--ckpt")
    p.add_argument("--n", type=int)
    p.add_argument("--temperature", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", dest="output")
    p.add_argument("--config")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("classifier-train", help="train the canvas classifier")
    p.add_argument("--in", dest="input")
    p.add_argument("--out", dest="output")
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--lr", type=float)
    p.add_argument("--embed-units", type=int, dest="embed_units")
    p.add_argument("--filters", type=_comma_ints)
    p.add_argument("--activation")
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    p.set_defaults(func=cmd_classifier_train)

    p = sub.add_parser("neighbors", help="nearest training drawings for sampled characters")
    p.add_argument("--queries", help="samples.json from the sample command")
    p.add_argument("--train", help="processed corpus to index")
    p.add_argument("--clf", help="classifier.npz from classifier-train")
    p.add_argument("--k", type=int)
    p.add_argument("--out", dest="output")
    p.add_argument("--config")
    p.set_defaults(func=cmd_neighbors)

    p = sub.add_parser("grid", help="arrange 100 samples into a similarity grid")
    p.add_argument("--samples", help="samples.json from the sample command")
    p.add_argument("--clf")
    p.add_argument("--train", help="optional processed corpus for the neighbor grid")
    p.add_argument("--out", dest="output")
    p.add_argument("--config")
    p.set_defaults(func=cmd_grid)

    return parser


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return 2
    except GlyphgenError as err:
        print(f"error:{type(err).category}: {err}", file=sys.stderr)
        return 1
    except (OSError, json.JSONDecodeError) as err:
        print(f"error:io: {err}", file=sys.stderr)
        return 1


def main() -> None:
    raise SystemExit(dispatch())


if __name__ == "__main__":
    main()
