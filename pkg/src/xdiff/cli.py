"""Command-line front end.

Every subcommand resolves its flags, writes its artifacts under
--out-dir, and drops a run.json there echoing the resolved config plus
a sha256 per artifact.  Outputs are JSON, CSV, and SVG only, written
through deterministic serializers, so a run is reproducible byte for
byte from (flags, seed); thread count never changes output bytes and is
therefore left out of the config echo.

Exit codes: 0 success, 1 configuration or domain error, 2 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
from scipy.special import expit

from . import benchmarks as bm
from .detect import (
    AGGREGATION_LABELS,
    DetectConfig,
    REPRESENTATIVE_LABELS,
    aggregation_sweep,
    detect,
    ranking_document,
)
from .evaluate import mean_truth_auc, pairwise_suite
from .mlp import (
    Dataset,
    MlpConfig,
    Normalizer,
    TrainConfig,
    load_csv,
    load_model,
    normalize,
    save_csv,
    save_model,
    train,
)
from .salience import (
    CamOptions,
    FeatureGrid,
    SalienceTensor,
    hessian_cam,
    render_heatmap,
    salience_document,
    taylor_cam,
    top_interactions,
)

log = logging.getLogger(__name__)


class CliError(Exception):
    """Configuration mistake surfaced to the user; exits with code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


def _json_bytes(doc) -> str:
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def _write_json(path: Path, doc) -> None:
    path.write_text(_json_bytes(doc), encoding="utf-8")


def _fmt_cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt_cell(c) for c in row) + "\n")


class Run:
    """run.json lifecycle: created as running, finished as ok or error,
    collecting artifact hashes along the way."""

    def __init__(self, out_dir: Path, subcommand: str, config: dict):
        self.out_dir = out_dir
        self.doc = {
            "subcommand": subcommand,
            "config": config,
            "artifacts": {},
            "status": "running",
        }
        self._flush()

    def _flush(self):
        _write_json(self.out_dir / "run.json", self.doc)

    def artifact(self, path: Path):
        digest = hashlib.sha256(Path(path).read_bytes()).hexdigest()
        try:
            name = Path(path).relative_to(self.out_dir).as_posix()
        except ValueError:
            name = Path(path).name
        self.doc["artifacts"][name] = digest

    def result(self, payload: dict):
        self.doc["result"] = payload

    def finish(self, status: str, error: str | None = None):
        self.doc["status"] = status
        if error is not None:
            self.doc["error"] = error
        self._flush()


def _resolve_seed(value) -> int:
    if value is not None:
        return value
    env = os.environ.get("XDIFF_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise CliError(f"XDIFF_SEED must be an integer, got {env!r}") from None
    return 0


def _out_path(args, name: str) -> Path:
    p = Path(name)
    return p if p.is_absolute() else Path(args.out_dir) / p


def _parse_hidden(text: str) -> tuple[int, ...]:
    text = text.strip()
    if not text or text.lower() == "none":
        return ()
    try:
        return tuple(int(t) for t in text.split(","))
    except ValueError:
        raise CliError(f"--hidden expects comma-separated integers, got {text!r}") from None


def _parse_functions(text: str) -> tuple[str, ...]:
    text = text.strip()
    if ".." in text:
        lo, hi = text.split("..", 1)
        try:
            a, b = int(lo.lstrip("Ff")), int(hi.lstrip("Ff"))
        except ValueError:
            raise CliError(f"cannot parse function range {text!r}") from None
        ids = tuple(f"F{i}" for i in range(a, b + 1))
    else:
        ids = tuple(t.strip().upper() for t in text.split(",") if t.strip())
    if not ids:
        raise CliError("--functions selected nothing")
    for fid in ids:
        bm.get_function(fid)
    return ids


def _parse_layout(text: str | None) -> tuple[int, int] | None:
    if text is None:
        return None
    try:
        r, c = text.lower().split("x", 1)
        return int(r), int(c)
    except ValueError:
        raise CliError(f"--layout expects ROWSxCOLS, got {text!r}") from None


def _load_grid(path, layout) -> FeatureGrid:
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if not row:
                continue
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                if i == 0:
                    continue
                raise CliError(f"non-numeric grid row {i} in {path}") from None
    if not rows:
        raise CliError(f"grid file {path} is empty")
    return FeatureGrid(np.array(rows), layout)


def _normalized_input(model, norm: Normalizer | None, data: Dataset) -> Dataset:
    """Bring raw features into the model's input space: apply the
    checkpoint's stored scaling when present, fit one otherwise."""
    if norm is not None:
        return Dataset(
            norm.apply(data.features),
            data.targets,
            feature_std=norm.std.copy(),
            feature_mean=norm.mean.copy(),
            normalized=True,
            centered=norm.centered,
        )
    return normalize(data)


def _parallel_map(fn, items, threads: int):
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


# --- subcommands -----------------------------------------------------------


def _cmd_gen_data(args, run: Run) -> None:
    fid = args.function.upper()
    data = bm.sample_dataset(fid, args.samples, args.seed)
    data_path = _out_path(args, args.out or f"{fid.lower()}_data.csv")
    truth_path = _out_path(args, args.truth_out or f"{fid.lower()}_truth.json")
    save_csv(data, data_path)
    _write_json(truth_path, bm.truth_document(fid))
    run.artifact(data_path)
    run.artifact(truth_path)


def _cmd_train(args, run: Run) -> None:
    data = load_csv(args.data)
    data = normalize(data, center=args.center)
    mcfg = MlpConfig(
        input_dim=data.dim,
        hidden=_parse_hidden(args.hidden),
        output_dim=args.output_dim,
        activation=args.activation,
        seed=args.seed,
    )
    tcfg = TrainConfig(
        learning_rate=args.learning_rate,
        max_epochs=args.epochs,
        patience=args.patience,
        batch_size=args.batch_size,
        val_fraction=args.val_fraction,
        optimizer=args.optimizer,
        seed=args.seed,
    )
    model, report = train(data, mcfg, tcfg)
    log.info("train: best epoch %d, val loss %.6g", report.best_epoch, report.best_val_loss)
    out = _out_path(args, args.out)
    norm = Normalizer(std=data.feature_std, mean=data.feature_mean, centered=args.center)
    save_model(model, out, normalizer=norm)
    run.artifact(out)
    run.result(
        {
            "best_epoch": report.best_epoch,
            "stopped_epoch": report.stopped_epoch,
            "best_val_loss": report.best_val_loss,
        }
    )


def _detect_config(args) -> DetectConfig:
    reps = tuple(t.strip() for t in args.reps.split(",") if t.strip())
    return DetectConfig(
        max_order=args.max_order,
        full_order=args.full_order,
        top_k=args.top_k,
        representatives=reps,
        aggregation=args.agg,
        task=args.task,
        class_index=args.class_index,
        use_logit=args.use_logit,
        squared_multiclass=args.squared_multiclass,
        seed=args.seed,
    )


def _cmd_detect(args, run: Run) -> None:
    model, norm = load_model(args.model)
    data = _normalized_input(model, norm, load_csv(args.data))
    ranking = detect(model, data, _detect_config(args), threads=args.threads)
    out = _out_path(args, args.out)
    _write_json(out, ranking_document(ranking))
    run.artifact(out)


def _cmd_sweep(args, run: Run) -> None:
    fid = args.function.upper()
    truth = bm.ground_truth(fid)
    raw = bm.sample_dataset(fid, args.samples, args.seed)
    if args.analytic:
        model, data = (lambda z: bm.eval_function(fid, z)), raw
    else:
        data = normalize(raw)
        mcfg = MlpConfig(input_dim=raw.dim, seed=args.seed)
        tcfg = TrainConfig(max_epochs=args.epochs, seed=args.seed)
        model, _ = train(data, mcfg, tcfg)
    cfg = DetectConfig(max_order=args.max_order, full_order=args.full_order,
                       top_k=args.top_k, seed=args.seed)
    rows = aggregation_sweep(
        model, data, cfg, lambda r: mean_truth_auc(r, truth), threads=args.threads
    )
    out = _out_path(args, args.out)
    _write_csv(out, ("label", "score"), [(r.label, r.score) for r in rows])
    run.artifact(out)


def _cmd_suite(args, run: Run) -> None:
    functions = _parse_functions(args.functions)
    report = pairwise_suite(
        functions=functions,
        trials=args.trials,
        samples=args.samples,
        seed=args.seed,
        threads=args.threads,
    )
    out = _out_path(args, args.out)
    _write_csv(out, ("id", "mean_auc", "std"), report.rows())
    run.artifact(out)


def _cam_options(args) -> CamOptions:
    return CamOptions(
        local_k=args.local_k,
        square=args.square,
        symmetrize=args.symmetrize,
        zero_diagonal=args.zero_diagonal,
        sum_before_square=args.sum_before_square,
        rectify=args.rectify,
    )


def _cmd_cam(args, run: Run) -> None:
    model, norm = load_model(args.model)
    layout = _parse_layout(args.layout)
    grid = _load_grid(args.grid, layout)
    if norm is not None:
        grid = FeatureGrid(
            norm.apply(grid.x.reshape(-1)).reshape(grid.x.shape), layout
        )
    opts = _cam_options(args)
    tensor = taylor_cam(model, grid, args.order, opts, threads=args.threads)
    out = _out_path(args, args.out)
    _write_json(out, salience_document(tensor, opts, args.top))
    run.artifact(out)
    if args.svg:
        svg = _out_path(args, args.svg)
        render_heatmap(tensor, svg, layout=grid.layout, top=args.top)
        run.artifact(svg)


def _demo_trial(seed: int, args, out_dir: Path) -> dict:
    """One planted-pair experiment: draw a pair, synthesize labels from
    it alone, train, and ask the averaged pairwise salience for its
    top-1 pair."""
    n, d = 9, 4
    rng = np.random.default_rng(seed)
    a, b = sorted(int(v) for v in rng.choice(n, size=2, replace=False))
    X = rng.uniform(-1.0, 1.0, size=(args.grids, n * d))
    dots = np.sum(X[:, a * d : (a + 1) * d] * X[:, b * d : (b + 1) * d], axis=1)
    data = normalize(Dataset(X, expit(dots)[:, None]))
    mcfg = MlpConfig(input_dim=n * d, hidden=_parse_hidden(args.hidden), seed=seed)
    tcfg = TrainConfig(max_epochs=args.epochs, patience=args.patience, seed=seed)
    model, report = train(data, mcfg, tcfg)

    acc = np.zeros((n, n))
    for _ in range(args.test_grids):
        test = rng.uniform(-1.0, 1.0, size=(n, d))
        scaled = (test.reshape(-1) / data.feature_std).reshape(n, d)
        acc += hessian_cam(model, FeatureGrid(scaled)).values
    acc /= args.test_grids
    avg = SalienceTensor(2, acc, symmetrized=True, diagonal_zeroed=True)
    top = top_interactions(avg, 1)[0][0]
    if args.svg:
        svg_path = out_dir / f"cam_demo_seed{seed}.svg"
        render_heatmap(avg, svg_path, layout=(3, 3), top=1)
    return {
        "seed": seed,
        "planted": [a, b],
        "top": list(top),
        "hit": list(top) == [a, b],
        "val_loss": report.best_val_loss,
    }


def _cmd_cam_demo(args, run: Run) -> None:
    out_dir = Path(args.out_dir)
    seeds = [args.seed + i for i in range(args.seeds)]
    trials = _parallel_map(lambda s: _demo_trial(s, args, out_dir), seeds, args.threads)
    hits = sum(t["hit"] for t in trials)
    log.info("cam-demo: %d/%d planted pairs recovered", hits, len(trials))
    doc = {
        "hit_rate": hits / len(trials),
        "hits": hits,
        "seeds": len(trials),
        "trials": trials,
    }
    out = _out_path(args, args.out)
    _write_json(out, doc)
    run.artifact(out)
    if args.svg:
        for s in seeds:
            run.artifact(out_dir / f"cam_demo_seed{s}.svg")
    run.result({"hit_rate": doc["hit_rate"]})


# --- parser ----------------------------------------------------------------


def build_parser() -> _Parser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help="base RNG seed (default: XDIFF_SEED env var, else 0)")
    common.add_argument("--threads", type=int, default=1,
                        help="worker threads; never changes output bytes")
    common.add_argument("--out-dir", default=".", help="directory for artifacts and run.json")
    common.add_argument("--log-level", default="warning",
                        choices=("debug", "info", "warning", "error"))

    parser = _Parser(prog="xdiff", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", parents=[common],
                       help="sample a benchmark dataset and its ground truth")
    p.add_argument("--function", required=True, help="benchmark id, F1..F10")
    p.add_argument("--samples", type=int, default=10000)
    p.add_argument("--out", default=None, help="dataset CSV name")
    p.add_argument("--truth-out", default=None, help="ground-truth JSON name")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", parents=[common], help="train a model on a dataset CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--out", default="model.json")
    p.add_argument("--hidden", default="140,100,60,20")
    p.add_argument("--activation", default="gelu", choices=("gelu", "relu"))
    p.add_argument("--output-dim", type=int, default=1)
    p.add_argument("--learning-rate", type=float, default=0.003)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=100)
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.add_argument("--optimizer", default="adam", choices=("adam", "sgd"))
    p.add_argument("--center", action="store_true",
                   help="also subtract feature means when normalizing")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("detect", parents=[common],
                       help="rank interactions of a trained model on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--max-order", type=int, default=5)
    p.add_argument("--full-order", type=int, default=2)
    p.add_argument("--top-k", type=int, default=10)
    p.add_argument("--reps", default="mean,min,mode,random",
                   help=f"comma list from {','.join(REPRESENTATIVE_LABELS)}")
    p.add_argument("--agg", default="mean", choices=AGGREGATION_LABELS)
    p.add_argument("--task", default="regression", choices=("regression", "classification"))
    p.add_argument("--class-index", type=int, default=0)
    p.add_argument("--use-logit", action="store_true")
    p.add_argument("--squared-multiclass", action="store_true")
    p.add_argument("--out", default="detect.json")
    p.set_defaults(func=_cmd_detect)

    p = sub.add_parser("sweep", parents=[common],
                       help="score every representative-subset x aggregation combination")
    p.add_argument("--function", required=True)
    p.add_argument("--samples", type=int, default=10000)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--max-order", type=int, default=5)
    p.add_argument("--full-order", type=int, default=2)
    p.add_argument("--top-k", type=int, default=10)
    p.add_argument("--analytic", action="store_true",
                   help="sweep the exact function instead of a trained model")
    p.add_argument("--out", default="sweep.csv")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("suite", parents=[common],
                       help="pairwise AUC benchmark across functions and trials")
    p.add_argument("--functions", default="F1..F10")
    p.add_argument("--trials", type=int, default=3)
    p.add_argument("--samples", type=int, default=10000)
    p.add_argument("--out", default="table.csv")
    p.set_defaults(func=_cmd_suite)

    p = sub.add_parser("cam", parents=[common],
                       help="salience tensor of a model over a feature grid")
    p.add_argument("--model", required=True)
    p.add_argument("--grid", required=True, help="CSV of n rows x d columns")
    p.add_argument("--order", type=int, default=2)
    p.add_argument("--local-k", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--square", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--symmetrize", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--zero-diagonal", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--sum-before-square", action="store_true")
    p.add_argument("--rectify", action="store_true")
    p.add_argument("--top", type=int, default=4)
    p.add_argument("--layout", default=None, help="ROWSxCOLS for the SVG panel")
    p.add_argument("--svg", default=None, help="also render a heatmap SVG")
    p.add_argument("--out", default="cam.json")
    p.set_defaults(func=_cmd_cam)

    p = sub.add_parser("cam-demo", parents=[common],
                       help="planted-pair experiment: train on labels that depend on "
                            "one vector pair and check the top-1 salience hit rate")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--grids", type=int, default=2000, help="training grids per seed")
    p.add_argument("--test-grids", type=int, default=8)
    p.add_argument("--epochs", type=int, default=60)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--hidden", default="64,32")
    p.add_argument("--svg", action=argparse.BooleanOptionalAction, default=True,
                   help="write one heatmap SVG per seed")
    p.add_argument("--out", default="cam_demo.json")
    p.set_defaults(func=_cmd_cam_demo)

    return parser


_ECHO_EXCLUDED = {"func", "threads", "out_dir", "log_level", "subcommand"}


def _config_echo(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in _ECHO_EXCLUDED}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args.seed = _resolve_seed(args.seed)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    logging.basicConfig(level=getattr(logging, args.log_level.upper()))

    try:
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        run = Run(out_dir, args.subcommand, _config_echo(args))
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2

    try:
        args.func(args, run)
    except OSError as e:
        run.finish("error", str(e))
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (CliError, ValueError, KeyError, TypeError, RuntimeError) as e:
        run.finish("error", str(e))
        print(f"error: {e}", file=sys.stderr)
        return 1
    run.finish("ok")
    return 0
