"""Experiment harness: training loop, ablation sweeps, and evaluation.

A run is fully determined by (TrainConfig, dataset): seeding covers parameter
init, dropout, epoch shuffling, the held-out split, and disordered label
reinforcement, so re-running a config reproduces the loss series exactly.
"""

from __future__ import annotations

import itertools
import json
import math
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from random import Random

import numpy as np
import torch

from . import checkpoint as ckpt
from .corpus import DatasetBundle, Sample, tokenize
from .encoder import EncoderConfig
from .metrics import DEFAULT_KS, MetricsReport, evaluate, propensities
from .model import AblationMode, Batch, GudnModel, LossBreakdown, ModelConfig
from .reinforce import ReinforceMode, build_label_input
from .sampling import build_clusters, label_bow


class ConfigError(Exception):
    """Invalid or inconsistent run configuration."""


class DivergenceError(Exception):
    """Training produced a non-finite loss."""


_AXIS_VALUES = {
    "mode": [m.value for m in AblationMode],
    "reinforce_mode": [m.value for m in ReinforceMode],
    "max_input_len": [64, 128, 256],
}


@dataclass
class TrainConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    mode: str = "full"
    reinforce_mode: str = "ordered"
    epochs: int = 40
    train_batch: int = 8
    test_batch: int = 16
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    seed: int = 0
    d_feat: int | None = None
    d_hidden: int | None = None
    dropout_rate: float = 0.5
    softmax_in_classifier: bool = True
    loss_reduction: str = "sum"
    negative_sampling: bool | None = None
    C_target: int | None = None
    k_clusters: int | None = None
    holdout_fraction: float = 0.1

    def __post_init__(self) -> None:
        try:
            AblationMode.from_str(self.mode)
            ReinforceMode.from_str(self.reinforce_mode)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.train_batch < 1 or self.test_batch < 1:
            raise ConfigError("batch sizes must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.optimizer not in ("adam", "adamw", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ConfigError("holdout_fraction must be in [0, 1)")

    @property
    def max_input_len(self) -> int:
        return self.encoder.max_input_len

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["encoder"] = self.encoder.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "encoder" in d:
            try:
                d["encoder"] = EncoderConfig.from_dict(d["encoder"])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad encoder config: {exc}") from None
        try:
            return cls(**d)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    def model_config(self, num_labels: int, vocab_size: int) -> ModelConfig:
        enc = self.encoder
        if enc.vocab_size == 0:
            enc = replace(enc, vocab_size=vocab_size)
        return ModelConfig(
            num_labels=num_labels,
            encoder=enc,
            d_feat=self.d_feat,
            d_hidden=self.d_hidden,
            dropout_rate=self.dropout_rate,
            softmax_in_classifier=self.softmax_in_classifier,
            loss_reduction=self.loss_reduction,
            negative_sampling=self.negative_sampling,
            C_target=self.C_target,
            k_clusters=self.k_clusters,
        )


def _coerce_set_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw  # bare strings like mode=full arrive unquoted


def apply_overrides(config_dict: dict, overrides: list[str]) -> dict:
    """Apply ``key=value`` pairs onto a config dict; dotted keys reach into
    nested sections and ``max_input_len`` aliases ``encoder.max_input_len``."""
    out = json.loads(json.dumps(config_dict))  # deep copy, JSON types only
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        if key == "max_input_len":
            key = "encoder.max_input_len"
        target = out
        parts = key.split(".")
        for part in parts[:-1]:
            target = target.setdefault(part, {})
            if not isinstance(target, dict):
                raise ConfigError(f"cannot descend into {part!r} in {key!r}")
        target[parts[-1]] = _coerce_set_value(raw)
    return out


def load_config(path: Path | str | None, overrides: list[str] | None = None) -> TrainConfig:
    if path is None:
        d = TrainConfig().to_dict()
    else:
        try:
            d = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(d, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
    if overrides:
        d = apply_overrides(d, overrides)
    return TrainConfig.from_dict(d)


@dataclass
class RunRecord:
    config: dict
    losses: list[dict]  # one {"feature","link","class","guide","overall"} per epoch
    holdout_p1: list[float]
    best_epoch: int
    epoch_seconds: list[float]
    metrics: MetricsReport
    checkpoint_path: str | None = None

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "losses": self.losses,
            "holdout_p1": self.holdout_p1,
            "best_epoch": self.best_epoch,
            "epoch_seconds": self.epoch_seconds,
            "metrics": self.metrics.to_dict(),
            "checkpoint_path": self.checkpoint_path,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        d = dict(d)
        d["metrics"] = MetricsReport.from_dict(d["metrics"])
        return cls(**d)

    def save(self, path: Path | str) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: Path | str) -> "RunRecord":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _multi_hot(positive_labels, num_labels: int) -> torch.Tensor:
    y = torch.zeros(num_labels)
    for l in positive_labels:
        y[l] = 1.0
    return y


def _assemble_batch(bundle: DatasetBundle, samples: list[Sample], mode: AblationMode,
                    reinforce_mode: ReinforceMode, rng: Random) -> Batch:
    num_labels = bundle.labels.num_labels
    text = torch.as_tensor([s.text_tokens for s in samples], dtype=torch.long)
    y = torch.stack([_multi_hot(s.positive_labels, num_labels) for s in samples])
    label_tokens = None
    if mode.needs_label_stream:
        rows = []
        for s in samples:
            groups = bundle.label_token_groups(s.positive_labels)
            rows.append(build_label_input(s.label_tokens, groups, reinforce_mode,
                                          bundle.max_input_len, rng))
        label_tokens = torch.as_tensor(rows, dtype=torch.long)
    return Batch(text_tokens=text, y=y, label_tokens=label_tokens)


def _chunks(items: list, size: int):
    for i in range(0, len(items), size):
        yield items[i:i + size]


def predict_rankings(model: GudnModel, samples: list[Sample], top_k: int,
                     batch_size: int = 16) -> list[np.ndarray]:
    rankings: list[np.ndarray] = []
    for chunk in _chunks(samples, batch_size):
        tokens = torch.as_tensor([s.text_tokens for s in chunk], dtype=torch.long)
        ids, _ = model.predict(tokens, top_k=top_k)
        rankings.extend(ids)
    return rankings


def train_label_counts(bundle: DatasetBundle) -> np.ndarray:
    counts = np.zeros(bundle.labels.num_labels, dtype=np.int64)
    for s in bundle.train:
        for l in s.positive_labels:
            counts[l] += 1
    return counts


def evaluate_model(model: GudnModel, bundle: DatasetBundle, ks=DEFAULT_KS,
                   batch_size: int = 16, psp_normalized: bool = False) -> MetricsReport:
    """Test-set metrics; PSP uses propensities from the bundle's train split."""
    if not bundle.test:
        raise ConfigError("dataset has no test samples to evaluate")
    top_k = min(max(ks), bundle.labels.num_labels)
    rankings = predict_rankings(model, bundle.test, top_k, batch_size)
    truths = [set(s.positive_labels) for s in bundle.test]
    props = None
    if bundle.train:
        props = propensities(train_label_counts(bundle), len(bundle.train))
    return evaluate(rankings, truths, ks=ks, props=props, psp_normalized=psp_normalized)


def _prepare_bundle(cfg: TrainConfig, bundle: DatasetBundle) -> DatasetBundle:
    if bundle.max_input_len != cfg.encoder.max_input_len:
        bundle = bundle.retokenized(cfg.encoder.max_input_len)
    return bundle


def build_model(cfg: TrainConfig, bundle: DatasetBundle) -> GudnModel:
    """Instantiate the model for a dataset, clustering labels when sampling is on."""
    model_cfg = cfg.model_config(bundle.labels.num_labels, bundle.tokens.size)
    index = None
    if model_cfg.sampling_enabled:
        index = build_clusters(label_bow(bundle), model_cfg.cluster_count, seed=cfg.seed)
    return GudnModel(model_cfg, cluster_index=index)


def train(cfg: TrainConfig, bundle: DatasetBundle,
          out_dir: Path | str | None = None) -> tuple[GudnModel, RunRecord]:
    """Run the full loop; returns the best-on-holdout model and its record."""
    if not bundle.train:
        raise ConfigError("dataset has no training samples")
    bundle = _prepare_bundle(cfg, bundle)
    mode = AblationMode.from_str(cfg.mode)
    reinforce_mode = ReinforceMode.from_str(cfg.reinforce_mode)

    torch.manual_seed(cfg.seed)
    rng = Random(cfg.seed)
    model = build_model(cfg, bundle)
    model.train()
    opt_cls = {"adam": torch.optim.Adam, "adamw": torch.optim.AdamW, "sgd": torch.optim.SGD}
    optimizer = opt_cls[cfg.optimizer](model.parameters(), lr=cfg.learning_rate)

    indices = list(range(len(bundle.train)))
    n_holdout = min(int(round(cfg.holdout_fraction * len(indices))), len(indices) - 1)
    shuffled = rng.sample(indices, len(indices))
    holdout = [bundle.train[i] for i in shuffled[:n_holdout]]
    train_set = [bundle.train[i] for i in shuffled[n_holdout:]]

    losses: list[dict] = []
    holdout_p1: list[float] = []
    epoch_seconds: list[float] = []
    best_epoch = -1
    best_p1 = -1.0
    best_state: dict | None = None
    for epoch in range(cfg.epochs):
        started = time.perf_counter()
        model.train()
        rng.shuffle(train_set)
        sums = {"feature": 0.0, "link": 0.0, "class": 0.0}
        for batch_id, chunk in enumerate(_chunks(train_set, cfg.train_batch)):
            batch = _assemble_batch(bundle, chunk, mode, reinforce_mode, rng)
            breakdown = model.overall_loss(batch, mode)
            step_losses = breakdown.floats()
            if not all(math.isfinite(v) for v in step_losses.values()):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch} batch {batch_id}: {step_losses}"
                )
            optimizer.zero_grad()
            breakdown.l_overall.backward()
            optimizer.step()
            for key in sums:
                sums[key] += step_losses[key]
        guide = sums["feature"] + sums["link"]
        losses.append({"feature": sums["feature"], "link": sums["link"],
                       "class": sums["class"], "guide": guide,
                       "overall": guide + sums["class"]})
        if holdout:
            rankings = predict_rankings(model, holdout, top_k=1, batch_size=cfg.test_batch)
            p1 = float(np.mean([1.0 if r[0] in s.positive_labels else 0.0
                                for r, s in zip(rankings, holdout)]))
            holdout_p1.append(p1)
            if p1 > best_p1:
                best_p1 = p1
                best_epoch = epoch
                best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
        epoch_seconds.append(time.perf_counter() - started)

    if best_state is not None:
        model.load_state_dict(best_state)
    else:
        best_epoch = cfg.epochs - 1
    model.eval()
    metrics = evaluate_model(model, bundle, batch_size=cfg.test_batch) if bundle.test else \
        MetricsReport(n_instances=0)
    record = RunRecord(config=cfg.to_dict(), losses=losses, holdout_p1=holdout_p1,
                       best_epoch=best_epoch, epoch_seconds=epoch_seconds, metrics=metrics)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        ckpt_path = out / "model.npz"
        ckpt.save(ckpt_path, model, bundle.tokens, bundle.labels)
        record.checkpoint_path = str(ckpt_path)
        record.save(out / "run.json")
    return model, record


def evaluate_checkpoint(checkpoint_path: Path | str, bundle: DatasetBundle,
                        ks=DEFAULT_KS, batch_size: int = 16,
                        psp_normalized: bool = False) -> MetricsReport:
    """Load a checkpoint and score it on the bundle's test split.

    Texts are re-tokenized with the vocabulary stored in the checkpoint, so a
    bundle built elsewhere (different vocab) still evaluates correctly.
    """
    model, tokens, labels = ckpt.load(checkpoint_path)
    if labels.num_labels != bundle.labels.num_labels:
        raise ConfigError(
            f"checkpoint was trained with {labels.num_labels} labels but the "
            f"dataset has {bundle.labels.num_labels}"
        )
    max_len = model.cfg.encoder.max_input_len
    rankings: list[np.ndarray] = []
    for chunk in _chunks(bundle.test, batch_size):
        rows = [tokenize(s.text, tokens, max_len).ids for s in chunk]
        ids, _ = model.predict(torch.as_tensor(rows, dtype=torch.long), top_k=min(max(ks), labels.num_labels))
        rankings.extend(ids)
    truths = [set(s.positive_labels) for s in bundle.test]
    props = None
    if bundle.train:
        props = propensities(train_label_counts(bundle), len(bundle.train))
    return evaluate(rankings, truths, ks=ks, props=props, psp_normalized=psp_normalized)


def _axis_runs(base: TrainConfig, axes: list[str]) -> list[tuple[dict, TrainConfig]]:
    for axis in axes:
        if axis not in _AXIS_VALUES:
            raise ConfigError(f"unknown ablation axis {axis!r}; "
                              f"choose from {sorted(_AXIS_VALUES)}")
    combos = itertools.product(*(_AXIS_VALUES[a] for a in axes))
    runs = []
    for values in combos:
        setting = dict(zip(axes, values))
        cfg_dict = base.to_dict()
        for key, value in setting.items():
            if key == "max_input_len":
                cfg_dict["encoder"]["max_input_len"] = value
            else:
                cfg_dict[key] = value
        runs.append((setting, TrainConfig.from_dict(cfg_dict)))
    return runs


def format_comparison(rows: list[dict]) -> str:
    """Aligned text table; one row per run, columns = settings then metrics."""
    if not rows:
        return "(no runs)"
    headers = list(rows[0].keys())
    table = [headers] + [[str(r[h]) for h in headers] for r in rows]
    widths = [max(len(line[i]) for line in table) for i in range(len(headers))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(line, widths)).rstrip()
             for line in table]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def ablate(base_config: TrainConfig, bundle: DatasetBundle, axes: list[str],
           out_dir: Path | str | None = None) -> tuple[list[RunRecord], list[dict]]:
    """Sweep the requested axes (same seed everywhere else), one run per combo.

    Returns the run records plus comparison rows; when ``out_dir`` is given the
    table is written as ``comparison.json`` / ``comparison.txt`` alongside one
    subdirectory per run.
    """
    runs = _axis_runs(base_config, axes)
    records = []
    rows = []
    for i, (setting, cfg) in enumerate(runs):
        run_dir = None
        if out_dir is not None:
            tag = "_".join(f"{k}-{v}" for k, v in setting.items())
            run_dir = Path(out_dir) / f"run{i:02d}_{tag}"
        _, record = train(cfg, bundle, out_dir=run_dir)
        records.append(record)
        row = dict(setting)
        for key, value in record.metrics.to_dict().items():
            if key != "n_instances":
                row[key] = round(value, 4)
        row["final_overall_loss"] = round(record.losses[-1]["overall"], 4)
        rows.append(row)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "comparison.json").write_text(json.dumps(rows, indent=2) + "\n", encoding="utf-8")
        (out / "comparison.txt").write_text(format_comparison(rows) + "\n", encoding="utf-8")
    return records, rows
