"""Command-line entry point: dataset generation, training, evaluation,
prediction, label clustering, ablation sweeps, and plotting.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 divergence.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import torch

from . import checkpoint as ckpt
from .checkpoint import CheckpointError
from .corpus import DataError, gen_synthetic, load_dir, tokenize
from .harness import (
    ConfigError,
    DivergenceError,
    TrainConfig,
    ablate,
    evaluate_checkpoint,
    format_comparison,
    load_config,
    train,
)
from .sampling import build_clusters, label_bow


def _cmd_gen_synth(args: argparse.Namespace) -> int:
    try:
        bundle = gen_synthetic(
            L=args.L,
            n_train=args.n_train,
            n_test=args.n_test,
            labels_per_sample=args.labels_per_sample,
            noise_tokens=args.noise_tokens,
            semantic_strength=args.semantic_strength,
            seed=args.seed,
            max_len=args.max_input_len,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    bundle.save(args.out)
    s = bundle.stats
    print(f"wrote {args.out}: TRN={s.trn} TST={s.tst} LBL={s.lbl} "
          f"SPL={s.spl:.2f} LPS={s.lps:.2f}")
    return 0


def _cmd_train(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, args.set)
    bundle = load_dir(args.data)
    _, record = train(cfg, bundle, out_dir=args.out)
    print(f"best epoch: {record.best_epoch}")
    print(record.metrics.format_table())
    print(f"checkpoint: {record.checkpoint_path}")
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    bundle = load_dir(args.data)
    report = evaluate_checkpoint(args.checkpoint, bundle,
                                 psp_normalized=args.psp_normalized)
    print(report.format_table())
    return 0


def _read_predict_input(path: Path) -> list[tuple[str, str]]:
    if not path.exists():
        raise DataError(f"input file not found: {path}")
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON: {exc}") from None
            if "text" not in obj:
                raise DataError(f"{path}:{lineno}: missing 'text' field")
            rows.append((str(obj.get("sample_id", lineno)), obj["text"]))
    if not rows:
        raise DataError(f"{path} contains no samples")
    return rows


def _cmd_predict(args: argparse.Namespace) -> int:
    model, tokens, labels = ckpt.load(args.checkpoint)
    rows = _read_predict_input(Path(args.input))
    max_len = model.cfg.encoder.max_input_len
    ids_batch = torch.as_tensor(
        [tokenize(text, tokens, max_len).ids for _, text in rows], dtype=torch.long
    )
    ids, scores = model.predict(ids_batch, top_k=min(args.top_k, labels.num_labels))
    for (sample_id, _), row_ids, row_scores in zip(rows, ids, scores):
        print(json.dumps({
            "sample_id": sample_id,
            "labels": [int(l) for l in row_ids],
            "label_texts": [labels.text(int(l)) for l in row_ids],
            "scores": [float(s) for s in row_scores],
        }))
    return 0


def _cmd_cluster(args: argparse.Namespace) -> int:
    bundle = load_dir(args.data)
    try:
        index = build_clusters(label_bow(bundle), args.C, seed=args.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    index.save(args.out)
    sizes = sorted(len(m) for m in index.members)
    print(f"wrote {args.out}: C={index.C}, cluster sizes {sizes[0]}..{sizes[-1]}")
    return 0


def _cmd_ablate(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, args.set)
    bundle = load_dir(args.data)
    axes = [a.strip() for a in args.axes.split(",") if a.strip()]
    if not axes:
        raise ConfigError("--axes must name at least one axis")
    _, rows = ablate(cfg, bundle, axes, out_dir=args.out)
    print(format_comparison(rows))
    return 0


def _cmd_plot_metrics(args: argparse.Namespace) -> int:
    from .plotting import load_runs, plot_runs  # matplotlib import deferred

    runs = load_runs(args.runs)
    if not runs:
        raise DataError(f"no run.json files found under {args.runs}")
    try:
        out = plot_runs(runs, args.out)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    print(f"wrote {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gudn",
        description="Guide-network XMTC experiments: train, evaluate, ablate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="generate a synthetic labeled corpus")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--L", type=int, default=16, help="number of labels")
    p.add_argument("--n-train", type=int, default=200)
    p.add_argument("--n-test", type=int, default=50)
    p.add_argument("--labels-per-sample", type=int, default=2)
    p.add_argument("--noise-tokens", type=int, default=6)
    p.add_argument("--semantic-strength", type=float, default=1.0,
                   help="fraction of labels whose text is meaningful (0..1)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-input-len", type=int, default=64)
    p.set_defaults(func=_cmd_gen_synth)

    p = sub.add_parser("train", help="train a model on a dataset directory")
    p.add_argument("--config", help="JSON config file (defaults when omitted)")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="directory for model.npz + run.json")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key (dotted for nested)")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--psp-normalized", action="store_true",
                   help="normalize PSP@k by the per-instance ideal")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("predict", help="rank labels for raw JSONL texts")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="JSONL with a 'text' field per line")
    p.add_argument("--top-k", type=int, default=5)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("cluster", help="build a balanced label cluster index")
    p.add_argument("--data", required=True)
    p.add_argument("--C", type=int, required=True, help="cluster count (power of 2)")
    p.add_argument("--out", required=True, help="output JSON file")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_cluster)

    p = sub.add_parser("ablate", help="sweep ablation axes and compare runs")
    p.add_argument("--config", help="JSON config file (defaults when omitted)")
    p.add_argument("--data", required=True)
    p.add_argument("--axes", required=True,
                   help="comma list from: mode, reinforce_mode, max_input_len")
    p.add_argument("--out", help="directory for per-run outputs + comparison table")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("plot-metrics", help="chart metrics/losses from run records")
    p.add_argument("--runs", required=True, help="directory containing run.json files")
    p.add_argument("--out", required=True, help="output .png or .svg path")
    p.set_defaults(func=_cmd_plot_metrics)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, CheckpointError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
