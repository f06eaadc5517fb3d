"""Checkpoint archive: one ``.npz`` holding weights, config, and vocabularies.

Every state-dict tensor is stored under its own key; a ``__meta__`` entry
carries the JSON side channel (format version, model config, token list,
label texts).  Guide-network weights are optional on load — inference never
touches them — so a checkpoint stripped down to the encoder + classifier
still evaluates identically.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from .corpus import LabelVocabulary, TokenVocabulary
from .model import GudnModel, ModelConfig
from .sampling import ClusterIndex

FORMAT_VERSION = 1

META_KEY = "__meta__"
CLUSTER_KEY = "__cluster_assignments__"

# Parameter name prefixes that inference actually uses; everything else in
# the state dict (guide network, label-stream extractor) may be absent.
_REQUIRED_PREFIXES = ("encoder.", "text_mlp.", "mlp2.", "label_head.")
_GUIDE_PREFIXES = ("label_mlp.", "fc_text.", "fc_label.", "shape_layer.", "link_head.")


class CheckpointError(Exception):
    """Unreadable, incomplete, or version-mismatched checkpoint."""


def _is_required(name: str, sampling: bool) -> bool:
    if name.startswith(_REQUIRED_PREFIXES):
        return True
    return sampling and name.startswith("cluster_head.")


def save(path: Path | str, model: GudnModel, tokens: TokenVocabulary,
         labels: LabelVocabulary, strip_guide: bool = False) -> None:
    """Write the model to ``path``; ``strip_guide`` drops training-only weights."""
    arrays: dict[str, np.ndarray] = {}
    for name, tensor in model.state_dict().items():
        if strip_guide and name.startswith(_GUIDE_PREFIXES):
            continue
        arrays[name] = tensor.detach().cpu().numpy()
    meta = {
        "format_version": FORMAT_VERSION,
        "model_config": model.cfg.to_dict(),
        "tokens": tokens.id_to_token,
        "label_texts": list(labels.texts),
    }
    if model.cluster_index is not None:
        arrays[CLUSTER_KEY] = np.asarray(model.cluster_index.assignments, dtype=np.int64)
        meta["cluster_count"] = model.cluster_index.C
    arrays[META_KEY] = np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, **arrays)


def load(path: Path | str) -> tuple[GudnModel, TokenVocabulary, LabelVocabulary]:
    """Rebuild model + vocabularies.  Missing inference weights are an error;
    missing guide weights are filled from the fresh initialization."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        archive = np.load(path, allow_pickle=False)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    with archive:
        if META_KEY not in archive:
            raise CheckpointError(f"{path} has no {META_KEY} entry; not a model checkpoint")
        meta = json.loads(bytes(archive[META_KEY].tobytes()).decode("utf-8"))
        if meta.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(
                f"unsupported checkpoint format {meta.get('format_version')!r} in {path}"
            )
        cfg = ModelConfig.from_dict(meta["model_config"])
        index = None
        if CLUSTER_KEY in archive:
            index = ClusterIndex.from_assignments(archive[CLUSTER_KEY], meta["cluster_count"])
        # seed deterministically so absent (stripped) guide weights are reproducible
        with torch.random.fork_rng():
            torch.manual_seed(0)
            model = GudnModel(cfg, cluster_index=index)
        state = model.state_dict()
        missing = []
        for name in state:
            if name in archive.files:
                loaded = torch.from_numpy(np.array(archive[name]))
                if loaded.shape != state[name].shape:
                    raise CheckpointError(
                        f"shape mismatch for {name}: checkpoint {tuple(loaded.shape)}, "
                        f"model {tuple(state[name].shape)}"
                    )
                state[name] = loaded
            elif _is_required(name, cfg.sampling_enabled):
                missing.append(name)
        if missing:
            raise CheckpointError(f"{path} is missing inference weights: {missing}")
        model.load_state_dict(state)
        model.eval()
        tokens = TokenVocabulary.from_tokens(list(meta["tokens"]))
        labels = LabelVocabulary(texts=tuple(meta["label_texts"]))
    return model, tokens, labels
