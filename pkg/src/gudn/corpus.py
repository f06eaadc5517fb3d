"""Dataset model, file formats, tokenizer, and synthetic-corpus generator.

Datasets live on disk as a pair of JSON-lines files (one object per line,
``{"id": int, "text": str, "labels": [int, ...]}``) plus a label vocabulary
TSV (one ``id<TAB>label text`` per line).  The tokenizer is a deliberately
simple lowercase whitespace/punctuation splitter; it stands in for a subword
tokenizer at desk scale and keeps the rest of the pipeline tokenizer-agnostic.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from random import Random
from typing import Iterable, NamedTuple, Sequence

CLS_ID = 0
PAD_ID = 1
UNK_ID = 2

_RESERVED_TOKENS = ("[CLS]", "[PAD]", "[UNK]")

_WORD_RE = re.compile(r"[a-z0-9]+")


class DataError(Exception):
    """Malformed or inconsistent dataset input."""


def normalize(text: str) -> list[str]:
    """Lowercase and split on whitespace/punctuation; drops empty pieces."""
    return _WORD_RE.findall(text.lower())


class TokenVocabulary:
    """Token <-> id map with reserved ids CLS=0, PAD=1, UNK=2.

    Corpus tokens are assigned contiguous ids starting at 3, in first-seen
    order, so vocabulary construction is deterministic for a fixed corpus.
    """

    def __init__(self) -> None:
        self.id_to_token: list[str] = list(_RESERVED_TOKENS)
        self.token_to_id: dict[str, int] = {t: i for i, t in enumerate(_RESERVED_TOKENS)}

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    def add(self, token: str) -> int:
        tid = self.token_to_id.get(token)
        if tid is None:
            tid = len(self.id_to_token)
            self.token_to_id[token] = tid
            self.id_to_token.append(token)
        return tid

    def encode(self, text: str) -> list[int]:
        """Raw body ids for a text: no CLS prefix, no padding, UNK for misses."""
        return [self.token_to_id.get(tok, UNK_ID) for tok in normalize(text)]

    @classmethod
    def build(cls, texts: Iterable[str]) -> "TokenVocabulary":
        vocab = cls()
        for text in texts:
            for tok in normalize(text):
                vocab.add(tok)
        return vocab

    @classmethod
    def from_tokens(cls, id_to_token: Sequence[str]) -> "TokenVocabulary":
        """Rebuild from a full id->token list (as stored in a checkpoint)."""
        if tuple(id_to_token[: len(_RESERVED_TOKENS)]) != _RESERVED_TOKENS:
            raise DataError(f"token list must start with {_RESERVED_TOKENS}")
        vocab = cls()
        for tok in id_to_token[len(_RESERVED_TOKENS):]:
            vocab.add(tok)
        if vocab.size != len(id_to_token):
            raise DataError("token list contains duplicates")
        return vocab

    def __eq__(self, other: object) -> bool:
        return isinstance(other, TokenVocabulary) and self.id_to_token == other.id_to_token

    def __repr__(self) -> str:  # pragma: no cover
        return f"TokenVocabulary(size={self.size})"


class TokenizedText(NamedTuple):
    ids: list[int]
    empty: bool


def tokenize(text: str, vocab: TokenVocabulary, max_len: int) -> TokenizedText:
    """Encode ``text`` to exactly ``max_len`` token ids.

    Output is CLS followed by the text's body ids, truncated to ``max_len``
    keeping the head, then right-padded with PAD.  A text that normalizes to
    nothing yields CLS plus padding and is flagged via ``empty``.
    """
    if max_len < 2:
        raise ValueError(f"max_len must be >= 2, got {max_len}")
    body = vocab.encode(text)
    ids = [CLS_ID] + body
    ids = ids[:max_len]
    ids.extend([PAD_ID] * (max_len - len(ids)))
    return TokenizedText(ids, empty=not body)


@dataclass(frozen=True)
class LabelVocabulary:
    """Ordered label id -> label text map; ids are exactly 0..L-1."""

    texts: tuple[str, ...]

    def __post_init__(self) -> None:
        for i, text in enumerate(self.texts):
            if not text.strip():
                raise DataError(f"label {i}: empty label text")

    @property
    def num_labels(self) -> int:
        return len(self.texts)

    def text(self, label_id: int) -> str:
        return self.texts[label_id]

    @classmethod
    def from_tsv(cls, path: Path | str) -> "LabelVocabulary":
        entries: dict[int, str] = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t", 1)
                if len(parts) != 2:
                    raise DataError(f"{path}:{lineno}: expected 'id<TAB>label text'")
                try:
                    label_id = int(parts[0])
                except ValueError as exc:
                    raise DataError(f"{path}:{lineno}: bad label id {parts[0]!r}") from exc
                if label_id in entries:
                    raise DataError(f"{path}:{lineno}: duplicate label id {label_id}")
                entries[label_id] = parts[1]
        if sorted(entries) != list(range(len(entries))):
            raise DataError(f"{path}: label ids must be exactly 0..{len(entries) - 1} with no gaps")
        return cls(texts=tuple(entries[i] for i in range(len(entries))))

    def to_tsv(self, path: Path | str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for i, text in enumerate(self.texts):
                fh.write(f"{i}\t{text}\n")


@dataclass
class Sample:
    """One instance: raw text, its token ids, and its positive label set.

    ``label_tokens`` is the unpadded CLS-prefixed concatenation of the
    positive labels' token bodies (ascending label id); it exists only for
    training samples and is never consumed at inference.
    """

    sample_id: int
    text: str
    text_tokens: list[int]
    positive_labels: frozenset[int]
    label_tokens: list[int] | None = None


@dataclass(frozen=True)
class DatasetStats:
    trn: int
    tst: int
    lbl: int
    spl: float  # mean training samples per label
    lps: float  # mean labels per training sample


@dataclass
class DatasetBundle:
    train: list[Sample]
    test: list[Sample]
    labels: LabelVocabulary
    tokens: TokenVocabulary
    max_input_len: int
    stats: DatasetStats = field(init=False)

    def __post_init__(self) -> None:
        self.stats = self._compute_stats()

    def _compute_stats(self) -> DatasetStats:
        total = sum(len(s.positive_labels) for s in self.train)
        trn = len(self.train)
        lbl = self.labels.num_labels
        return DatasetStats(
            trn=trn,
            tst=len(self.test),
            lbl=lbl,
            spl=total / lbl if lbl else 0.0,
            lps=total / trn if trn else 0.0,
        )

    def label_token_groups(self, positive_labels: Iterable[int]) -> list[list[int]]:
        """Per-label token bodies (ascending label id), for disordered fills."""
        return [self.tokens.encode(self.labels.text(l)) for l in sorted(positive_labels)]

    def retokenized(self, max_len: int) -> "DatasetBundle":
        """Same corpus re-padded/truncated to a different input length."""
        if max_len == self.max_input_len:
            return self

        def redo(samples: list[Sample]) -> list[Sample]:
            return [
                replace(s, text_tokens=tokenize(s.text, self.tokens, max_len).ids)
                for s in samples
            ]

        return DatasetBundle(
            train=redo(self.train),
            test=redo(self.test),
            labels=self.labels,
            tokens=self.tokens,
            max_input_len=max_len,
        )

    def save(self, out_dir: Path | str) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        self.labels.to_tsv(out / "labels.tsv")
        for name, samples in (("train.jsonl", self.train), ("test.jsonl", self.test)):
            with open(out / name, "w", encoding="utf-8") as fh:
                for s in samples:
                    fh.write(
                        json.dumps(
                            {"id": s.sample_id, "text": s.text, "labels": sorted(s.positive_labels)},
                            ensure_ascii=False,
                        )
                        + "\n"
                    )
        meta = {"max_input_len": self.max_input_len}
        (out / "meta.json").write_text(json.dumps(meta) + "\n", encoding="utf-8")


def _base_label_tokens(positive_labels: frozenset[int], labels: LabelVocabulary,
                       vocab: TokenVocabulary) -> list[int]:
    ids = [CLS_ID]
    for label_id in sorted(positive_labels):
        ids.extend(vocab.encode(labels.text(label_id)))
    return ids


def _parse_samples(path: Path | str, num_labels: int) -> list[tuple[int, str, frozenset[int]]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: malformed JSON ({exc})") from exc
            try:
                sid = int(obj["id"])
                text = str(obj["text"])
                raw_labels = obj["labels"]
            except (KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: expected keys id/text/labels") from exc
            labels = set()
            for l in raw_labels:
                if not isinstance(l, int) or not 0 <= l < num_labels:
                    raise DataError(f"sample {sid}: label id {l!r} out of range 0..{num_labels - 1}")
                labels.add(l)  # duplicates collapse here
            rows.append((sid, text, frozenset(labels)))
    return rows


def load_jsonl(path_train: Path | str, path_test: Path | str, path_labels: Path | str,
               max_len: int = 512) -> DatasetBundle:
    """Load a dataset from its three files; deterministic for fixed inputs.

    The token vocabulary is built from the union of training texts and label
    texts (in that order), so test-only tokens map to UNK.
    """
    labels = LabelVocabulary.from_tsv(path_labels)
    train_rows = _parse_samples(path_train, labels.num_labels)
    test_rows = _parse_samples(path_test, labels.num_labels)

    for sid, _, pos in train_rows:
        if not pos:
            raise DataError(f"sample {sid}: training sample has no labels")

    vocab = TokenVocabulary.build(
        [text for _, text, _ in train_rows] + list(labels.texts)
    )

    train = [
        Sample(
            sample_id=sid,
            text=text,
            text_tokens=tokenize(text, vocab, max_len).ids,
            positive_labels=pos,
            label_tokens=_base_label_tokens(pos, labels, vocab),
        )
        for sid, text, pos in train_rows
    ]
    test = [
        Sample(
            sample_id=sid,
            text=text,
            text_tokens=tokenize(text, vocab, max_len).ids,
            positive_labels=pos,
            label_tokens=None,
        )
        for sid, text, pos in test_rows
    ]
    return DatasetBundle(train=train, test=test, labels=labels, tokens=vocab, max_input_len=max_len)


def load_dir(data_dir: Path | str, max_len: int | None = None) -> DatasetBundle:
    """Load ``train.jsonl``/``test.jsonl``/``labels.tsv`` from one directory."""
    d = Path(data_dir)
    for name in ("train.jsonl", "test.jsonl", "labels.tsv"):
        if not (d / name).exists():
            raise DataError(f"missing dataset file: {d / name}")
    if max_len is None:
        meta = d / "meta.json"
        max_len = 512
        if meta.exists():
            max_len = int(json.loads(meta.read_text(encoding="utf-8")).get("max_input_len", 512))
    return load_jsonl(d / "train.jsonl", d / "test.jsonl", d / "labels.tsv", max_len=max_len)


_NOISE_WORDS = [f"filler{i:02d}" for i in range(50)]
_SYMBOL_ALPHABET = "+-!*#@$%^&"


def gen_synthetic(L: int, n_train: int, n_test: int, labels_per_sample: int,
                  noise_tokens: int, semantic_strength: float, seed: int,
                  max_len: int = 64) -> DatasetBundle:
    """Generate a synthetic corpus where each label owns signature tokens.

    Every sample's text contains the two-word signature of each of its
    positive labels plus ``noise_tokens`` filler words, shuffled.  With
    probability ``semantic_strength`` a label's text is its signature (so the
    label is semantically informative); otherwise it is a meaningless symbol
    string carrying no corpus tokens at all.  Fully reproducible from ``seed``.
    """
    if not 1 <= labels_per_sample <= L:
        raise ValueError(f"need L >= labels_per_sample >= 1, got L={L}, "
                         f"labels_per_sample={labels_per_sample}")
    if not 0.0 <= semantic_strength <= 1.0:
        raise ValueError(f"semantic_strength must be in [0,1], got {semantic_strength}")
    rng = Random(seed)

    signatures = [(f"sig{l:03d}a", f"sig{l:03d}b") for l in range(L)]
    label_texts = []
    for l in range(L):
        if rng.random() < semantic_strength:
            label_texts.append(" ".join(signatures[l]))
        else:
            label_texts.append("".join(rng.choice(_SYMBOL_ALPHABET) for _ in range(rng.randint(4, 8))))
    labels = LabelVocabulary(texts=tuple(label_texts))

    def draw_rows(n: int, id_offset: int) -> list[tuple[int, str, frozenset[int]]]:
        rows = []
        for i in range(n):
            first = (id_offset + i) % L  # cycle so every label gets coverage
            others = rng.sample([l for l in range(L) if l != first], labels_per_sample - 1)
            pos = frozenset([first, *others])
            words: list[str] = []
            for l in sorted(pos):
                words.extend(signatures[l])
            words.extend(rng.choice(_NOISE_WORDS) for _ in range(noise_tokens))
            rng.shuffle(words)
            rows.append((id_offset + i, " ".join(words), pos))
        return rows

    train_rows = draw_rows(n_train, 0)
    test_rows = draw_rows(n_test, n_train)

    vocab = TokenVocabulary.build([t for _, t, _ in train_rows] + list(labels.texts))
    train = [
        Sample(sid, text, tokenize(text, vocab, max_len).ids, pos,
               _base_label_tokens(pos, labels, vocab))
        for sid, text, pos in train_rows
    ]
    test = [
        Sample(sid, text, tokenize(text, vocab, max_len).ids, pos, None)
        for sid, text, pos in test_rows
    ]
    return DatasetBundle(train=train, test=test, labels=labels, tokens=vocab, max_input_len=max_len)
