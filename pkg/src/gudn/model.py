"""The GUDN model: feature extractor, guide network, and ranking classifier.

Three losses drive training.  The feature loss pulls the guided text and
label features toward one shared latent space; the link loss maps guided
label features directly onto the true label vector; the classification loss
trains the ranking head on text features alone.  The guide network exists
only to shape training: inference runs purely encoder -> text features ->
ranking classifier, so guide parameters and label inputs can be discarded
after training without changing a single prediction.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass

import numpy as np
import torch
from torch import Tensor, nn

from .encoder import EncoderConfig, TransformerEncoder, concat_cls
from .sampling import ClusterIndex, rank_descending, select_candidates, two_stage_predict

PROB_EPS = 1e-7  # probability clamp; keeps log() away from 0 and 1

NEGATIVE_SAMPLING_AUTO_THRESHOLD = 5000  # label count above which sampling turns on


class AblationMode(enum.Enum):
    FULL = "full"
    BERT_ONLY = "bert_only"
    GUD_F = "gud_f"  # feature guide only
    GUD_L = "gud_l"  # link guide only

    @classmethod
    def from_str(cls, value: str) -> "AblationMode":
        try:
            return cls(value.lower())
        except ValueError:
            raise ValueError(
                f"unknown mode {value!r}; expected one of {[m.value for m in cls]}"
            ) from None

    @property
    def use_feature_guide(self) -> bool:
        return self in (AblationMode.FULL, AblationMode.GUD_F)

    @property
    def use_link_guide(self) -> bool:
        return self in (AblationMode.FULL, AblationMode.GUD_L)

    @property
    def needs_label_stream(self) -> bool:
        return self is not AblationMode.BERT_ONLY


def _default_cluster_count(num_labels: int) -> int:
    c = 1
    while c * c < num_labels:
        c *= 2
    return c


@dataclass
class ModelConfig:
    num_labels: int
    encoder: EncoderConfig
    d_feat: int | None = None  # default: encoder hidden width
    d_hidden: int | None = None
    dropout_rate: float = 0.5
    softmax_in_classifier: bool = True
    loss_reduction: str = "sum"
    negative_sampling: bool | None = None  # None: auto-enable for large label spaces
    C_target: int | None = None
    k_clusters: int | None = None

    def __post_init__(self) -> None:
        if self.num_labels < 1:
            raise ValueError("num_labels must be >= 1")
        if self.d_feat is None:
            self.d_feat = self.encoder.hidden_dim
        if self.d_hidden is None:
            self.d_hidden = self.encoder.hidden_dim
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0,1), got {self.dropout_rate}")
        if self.loss_reduction not in ("sum", "mean"):
            raise ValueError(f"loss_reduction must be 'sum' or 'mean', got {self.loss_reduction!r}")
        if self.sampling_enabled:
            c = self.cluster_count
            if c < 1 or c & (c - 1) or c > self.num_labels:
                raise ValueError(f"C_target must be a power of 2 <= num_labels, got {c}")
            if not 1 <= self.num_candidate_clusters <= c:
                raise ValueError(f"k_clusters must be in 1..{c}")

    @property
    def sampling_enabled(self) -> bool:
        if self.negative_sampling is not None:
            return self.negative_sampling
        return self.num_labels > NEGATIVE_SAMPLING_AUTO_THRESHOLD

    @property
    def cluster_count(self) -> int:
        return self.C_target if self.C_target is not None else _default_cluster_count(self.num_labels)

    @property
    def num_candidate_clusters(self) -> int:
        if self.k_clusters is not None:
            return self.k_clusters
        return max(1, math.ceil(self.cluster_count / 4))

    def to_dict(self) -> dict:
        return {
            "num_labels": self.num_labels,
            "encoder": self.encoder.to_dict(),
            "d_feat": self.d_feat,
            "d_hidden": self.d_hidden,
            "dropout_rate": self.dropout_rate,
            "softmax_in_classifier": self.softmax_in_classifier,
            "loss_reduction": self.loss_reduction,
            "negative_sampling": self.negative_sampling,
            "C_target": self.C_target,
            "k_clusters": self.k_clusters,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["encoder"] = EncoderConfig.from_dict(d["encoder"])
        return cls(**d)


@dataclass
class Batch:
    text_tokens: Tensor  # (B, T) long
    y: Tensor  # (B, L) multi-hot float
    label_tokens: Tensor | None = None  # (B, T) long; None when the mode skips labels


@dataclass
class LossBreakdown:
    """The three loss terms plus their sums; the identities
    l_guide = l_feature + l_link and l_overall = l_guide + l_class hold
    exactly (same-dtype additions, no re-derivation)."""

    l_feature: Tensor
    l_link: Tensor
    l_class: Tensor
    l_guide: Tensor
    l_overall: Tensor

    @classmethod
    def compose(cls, l_feature: Tensor, l_link: Tensor, l_class: Tensor) -> "LossBreakdown":
        l_guide = l_feature + l_link
        return cls(l_feature, l_link, l_class, l_guide, l_guide + l_class)

    def floats(self) -> dict[str, float]:
        """Detached values recomposed in float64 so the identities survive logging."""
        lf = float(self.l_feature.detach())
        ll = float(self.l_link.detach())
        lc = float(self.l_class.detach())
        lg = lf + ll
        return {"feature": lf, "link": ll, "class": lc, "guide": lg, "overall": lg + lc}


def feature_loss(g_t: Tensor, g_l: Tensor) -> Tensor:
    """Half the mean (over the batch) squared distance between the guided
    text rows and guided label rows: sum_i ||g_t[i] - g_l[i]||^2 / (2n)."""
    if g_t.shape != g_l.shape:
        raise ValueError(f"shape mismatch: {tuple(g_t.shape)} vs {tuple(g_l.shape)}")
    n = g_t.shape[0]
    if n == 0:
        return g_t.new_zeros(())
    return ((g_t - g_l) ** 2).sum() / (2 * n)


def bce_sum(logits: Tensor, y: Tensor, reduction: str = "sum") -> Tensor:
    """Binary cross-entropy summed over every entry, probabilities clamped
    to [eps, 1-eps].  reduction='mean' divides by the batch size only."""
    p = torch.sigmoid(logits).clamp(PROB_EPS, 1.0 - PROB_EPS)
    loss = -(y * torch.log(p) + (1.0 - y) * torch.log(1.0 - p)).sum()
    if reduction == "mean":
        loss = loss / logits.shape[0]
    return loss


def class_loss(logits: Tensor, y: Tensor, reduction: str = "sum") -> Tensor:
    return bce_sum(logits, y, reduction=reduction)


class GudnModel(nn.Module):
    def __init__(self, cfg: ModelConfig, cluster_index: ClusterIndex | None = None):
        super().__init__()
        self.cfg = cfg
        enc = cfg.encoder
        assert cfg.d_feat is not None and cfg.d_hidden is not None
        self.encoder = TransformerEncoder(enc)
        self.dropout = nn.Dropout(cfg.dropout_rate)
        self.text_mlp = nn.Linear(enc.text_layers * enc.hidden_dim, cfg.d_feat)
        self.label_mlp = nn.Linear(enc.n_label_layers * enc.hidden_dim, cfg.d_feat)
        self.fc_text = nn.Linear(cfg.d_feat, cfg.d_feat)
        self.fc_label = nn.Linear(cfg.d_feat, cfg.d_feat)
        self.shape_layer = nn.Linear(cfg.d_feat, cfg.d_feat)
        self.link_head = nn.Linear(cfg.d_feat, cfg.num_labels)
        self.mlp2 = nn.Linear(cfg.d_feat, cfg.d_hidden)
        self.label_head = nn.Linear(cfg.d_hidden, cfg.num_labels)
        self.cluster_head = (
            nn.Linear(cfg.d_hidden, cfg.cluster_count) if cfg.sampling_enabled else None
        )
        self.cluster_index = cluster_index

    # ---- feature extractor ----

    def extract_text_features(self, cls: Tensor) -> Tensor:
        f = concat_cls(cls, self.cfg.encoder.text_layers)
        return self.text_mlp(torch.relu(self.dropout(f)))

    def extract_label_features(self, cls: Tensor) -> Tensor:
        f = concat_cls(cls, self.cfg.encoder.n_label_layers)
        return self.label_mlp(torch.relu(self.dropout(f)))

    def text_features(self, tokens: Tensor) -> Tensor:
        return self.extract_text_features(self.encoder(tokens))

    # ---- guide network ----

    def guide_forward(self, e_t: Tensor, e_l: Tensor) -> tuple[Tensor, Tensor]:
        if e_t.shape[0] != e_l.shape[0]:
            raise ValueError(f"batch mismatch: {e_t.shape[0]} text rows vs {e_l.shape[0]} label rows")
        return self.shape_layer(self.fc_text(e_t)), self.fc_label(e_l)

    def link_loss(self, g_l: Tensor, y: Tensor) -> Tensor:
        return bce_sum(self.link_head(g_l), y, reduction=self.cfg.loss_reduction)

    # ---- ranking classifier ----

    def classifier_activation(self, e_t: Tensor) -> Tensor:
        h = self.mlp2(e_t)
        if self.cfg.softmax_in_classifier:
            return torch.softmax(h, dim=-1)
        return torch.relu(h)

    def rank_classify(self, e_t: Tensor) -> Tensor:
        return self.label_head(self.classifier_activation(e_t))

    # ---- objective ----

    def overall_loss(self, batch: Batch, mode: AblationMode) -> LossBreakdown:
        e_t = self.text_features(batch.text_tokens)
        zero = e_t.new_zeros(())
        if mode.needs_label_stream:
            if batch.label_tokens is None:
                raise ValueError(f"mode {mode.value} requires label tokens in the batch")
            e_l = self.extract_label_features(self.encoder(batch.label_tokens))
            g_t, g_l = self.guide_forward(e_t, e_l)
            l_feature = feature_loss(g_t, g_l) if mode.use_feature_guide else zero
            l_link = self.link_loss(g_l, batch.y) if mode.use_link_guide else zero
        else:
            l_feature = zero
            l_link = zero
        l_class = self._class_term(e_t, batch.y)
        return LossBreakdown.compose(l_feature, l_link, l_class)

    def _class_term(self, e_t: Tensor, y: Tensor) -> Tensor:
        if not self.cfg.sampling_enabled:
            return class_loss(self.rank_classify(e_t), y, reduction=self.cfg.loss_reduction)
        if self.cluster_index is None:
            raise RuntimeError("negative sampling is enabled but no cluster index was provided")
        assert self.cluster_head is not None
        hidden = self.classifier_activation(e_t)
        cluster_logits = self.cluster_head(hidden)
        label_logits = self.label_head(hidden)
        scores = cluster_logits.detach().cpu().numpy()
        total = e_t.new_zeros(())
        targets = []
        for i in range(e_t.shape[0]):
            positives = {int(l) for l in torch.nonzero(y[i]).ravel()}
            cand = select_candidates(scores[i], positives, self.cluster_index,
                                     self.cfg.num_candidate_clusters)
            idx = torch.as_tensor(cand.labels, dtype=torch.long, device=e_t.device)
            total = total + bce_sum(label_logits[i, idx], y[i, idx])
            targets.append(torch.as_tensor(cand.cluster_target, dtype=y.dtype, device=y.device))
        total = total + bce_sum(cluster_logits, torch.stack(targets))
        if self.cfg.loss_reduction == "mean":
            total = total / e_t.shape[0]
        return total

    # ---- inference ----

    def predict(self, text_tokens: Tensor, top_k: int) -> tuple[np.ndarray, np.ndarray]:
        """Ranked label ids and probabilities for each row, label inputs unused.

        Ties in score break toward the lower label id.  ``top_k`` larger than
        the label count is truncated with a warning.
        """
        L = self.cfg.num_labels
        if top_k > L:
            warnings.warn(f"top_k {top_k} exceeds label count {L}; truncating")
            top_k = L
        if top_k < 1:
            raise ValueError("top_k must be >= 1")
        was_training = self.training
        self.eval()
        try:
            with torch.no_grad():
                e_t = self.text_features(torch.as_tensor(text_tokens, dtype=torch.long))
                if e_t.dim() == 1:
                    e_t = e_t.unsqueeze(0)
                if self.cfg.sampling_enabled:
                    if self.cluster_index is None:
                        raise RuntimeError("negative sampling is enabled but no cluster index was provided")
                    return two_stage_predict(self, e_t, self.cluster_index,
                                             self.cfg.num_candidate_clusters, top_k)
                probs = torch.sigmoid(self.rank_classify(e_t)).cpu().numpy()
        finally:
            self.train(was_training)
        ids = np.empty((probs.shape[0], top_k), dtype=np.int64)
        scores = np.empty((probs.shape[0], top_k), dtype=np.float64)
        for i in range(probs.shape[0]):
            order = rank_descending(probs[i])[:top_k]
            ids[i] = order
            scores[i] = probs[i][order]
        return ids, scores
