"""Per-step procedural contexts and the encoder backends that read them."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Protocol, Sequence

import torch
from torch import nn

from .constants import (
    CLS_TOKEN,
    DEFAULT_PRETRAINED_NAME,
    NOWHERE_TOKEN,
    PAD_TOKEN,
    PRETRAINED_DIR_ENV,
    QUERY_TEMPLATE,
    RESERVED_CLASS_TOKENS,
    SEP_TOKEN,
    UNK_TOKEN,
    UNKNOWN_TOKEN,
    AttributeKind,
)
from .data import ProcessDocument, RecipeDocument, tokenize
from .errors import ContextOverflow, EncoderFailure, ModelNumericsError, TargetMismatch
from .formalism import AttributeValue, EntityRef

if TYPE_CHECKING:
    from .config import TrainConfig

logger = logging.getLogger(__name__)

Document = ProcessDocument | RecipeDocument

CLASS_TOKEN_BY_KIND = {AttributeKind.NOWHERE: NOWHERE_TOKEN, AttributeKind.UNKNOWN: UNKNOWN_TOKEN}


class ContextTokenizer(Protocol):
    cls_token: str
    sep_token: str
    pad_id: int

    def split_word(self, word: str) -> list[str]: ...

    def convert_tokens_to_ids(self, tokens: Sequence[str]) -> list[int]: ...

    def __len__(self) -> int: ...


class WordVocab:
    """Lowercased word-level vocabulary for the tiny backend."""

    specials = (PAD_TOKEN, UNK_TOKEN, CLS_TOKEN, SEP_TOKEN, *RESERVED_CLASS_TOKENS)
    cls_token = CLS_TOKEN
    sep_token = SEP_TOKEN
    pad_id = 0

    def __init__(self, words: Iterable[str] = ()) -> None:
        self.itos: list[str] = list(self.specials)
        self.stoi: dict[str, int] = {token: idx for idx, token in enumerate(self.itos)}
        for word in words:
            self.add(word)

    def add(self, word: str) -> int:
        if word not in self.specials:
            word = word.lower()
        if word not in self.stoi:
            self.stoi[word] = len(self.itos)
            self.itos.append(word)
        return self.stoi[word]

    @classmethod
    def from_documents(cls, docs: Iterable[Document]) -> WordVocab:
        vocab = cls()
        for doc in docs:
            for entity in doc.entities:
                for word in tokenize(QUERY_TEMPLATE.format(entity=entity.name)):
                    vocab.add(word)
            for sentence in doc.sentences:
                for word in sentence:
                    vocab.add(word)
        return vocab

    @classmethod
    def from_tokens(cls, tokens: Sequence[str]) -> WordVocab:
        if tuple(tokens[: len(cls.specials)]) != cls.specials:
            raise ValueError("Saved vocabulary does not start with the special tokens")
        vocab = cls()
        for token in tokens[len(cls.specials) :]:
            vocab.add(token)
        return vocab

    def split_word(self, word: str) -> list[str]:
        return [word if word in self.specials else word.lower()]

    def convert_tokens_to_ids(self, tokens: Sequence[str]) -> list[int]:
        unk = self.stoi[UNK_TOKEN]
        return [self.stoi.get(token, unk) for token in tokens]

    def __len__(self) -> int:
        return len(self.itos)


class PretrainedTokenizer:
    """Subword tokenizer of a pretrained checkpoint with the reserved class tokens added."""

    def __init__(self, name_or_path: str) -> None:
        from transformers import AutoTokenizer

        try:
            self.hf = AutoTokenizer.from_pretrained(name_or_path)
        except OSError as exc:
            raise EncoderFailure(f"Cannot load tokenizer from {name_or_path}: {exc}") from exc
        self.hf.add_special_tokens({"additional_special_tokens": list(RESERVED_CLASS_TOKENS)})
        self.cls_token = self.hf.cls_token
        self.sep_token = self.hf.sep_token
        self.pad_id = self.hf.pad_token_id or 0

    def split_word(self, word: str) -> list[str]:
        if word in RESERVED_CLASS_TOKENS:
            return [word]
        return self.hf.tokenize(word) or [self.hf.unk_token]

    def convert_tokens_to_ids(self, tokens: Sequence[str]) -> list[int]:
        return list(self.hf.convert_tokens_to_ids(list(tokens)))

    def __len__(self) -> int:
        return len(self.hf)


@dataclass(frozen=True, slots=True)
class ProceduralContext:
    tokens: tuple[str, ...]
    token_ids: tuple[int, ...]
    query_range: tuple[int, int]
    class_token_positions: dict[AttributeKind, int]
    sentence_ranges: dict[int, tuple[int, int]]
    step: int
    entity: EntityRef
    subword_alignment: dict[tuple[int, int], tuple[int, int]]
    words: dict[int, tuple[str, ...]]
    dropped_sentences: tuple[int, ...] = ()
    _word_at: dict[int, tuple[int, int]] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self) -> None:
        for (sentence, word), (start, end) in self.subword_alignment.items():
            for position in range(start, end):
                self._word_at[position] = (sentence, word)

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def earliest_sentence(self) -> int:
        return min(self.sentence_ranges)

    def sentence_mask(self) -> list[bool]:
        mask = [False] * len(self.tokens)
        for start, end in self.sentence_ranges.values():
            mask[start:end] = [True] * (end - start)
        return mask

    def class_position(self, kind: AttributeKind) -> int:
        return self.class_token_positions[kind]

    def target_positions(self, value: AttributeValue) -> tuple[int, int]:
        """Inclusive encoder positions of the start and end tokens standing for `value`."""
        if value.kind != AttributeKind.SPAN:
            position = self.class_token_positions[value.kind]
            return position, position
        loc = value.span_loc
        if loc is None:
            raise TargetMismatch(f"Span {value.span_text!r} has no grounded location")
        first = self.subword_alignment.get((loc.sentence, loc.start))
        last = self.subword_alignment.get((loc.sentence, loc.end - 1))
        if first is None or last is None:
            raise TargetMismatch(
                f"Span {value.span_text!r} at sentence {loc.sentence} lies outside the step-{self.step} context"
            )
        return first[0], last[1] - 1

    def word_at(self, position: int) -> tuple[int, int] | None:
        return self._word_at.get(position)

    def span_text(self, start: int, end: int) -> str:
        """Recover surface words covering encoder positions start..end (inclusive)."""
        first, last = self.word_at(start), self.word_at(end)
        if first is None or last is None or first[0] != last[0] or first[1] > last[1]:
            raise ValueError(f"Positions {start}..{end} do not cover words of one sentence")
        sentence = first[0]
        return " ".join(self.words[sentence][first[1] : last[1] + 1])


def build_context(
    doc: Document,
    entity: EntityRef,
    step: int,
    tokenizer: ContextTokenizer,
    max_length: int = 512,
    full_context: bool = False,
) -> ProceduralContext:
    """Assemble [cls] query [sep] class-tokens S_0..S_{step-1} [sep] for one entity."""
    if not 1 <= step <= doc.num_steps:
        raise ValueError(f"Step out of range for {doc.process_id}: {step}")

    query: list[str] = []
    for word in tokenize(QUERY_TEMPLATE.format(entity=entity.name)):
        query.extend(tokenizer.split_word(word))
    last = doc.num_steps - 1 if full_context else step - 1
    pieces = {
        sentence: [tokenizer.split_word(word) for word in doc.sentences[sentence]] for sentence in range(last + 1)
    }
    fixed = len(query) + len(RESERVED_CLASS_TOKENS) + 3
    sizes = {sentence: sum(len(chunk) for chunk in chunks) for sentence, chunks in pieces.items()}

    kept = list(range(last + 1))
    dropped: list[int] = []
    required = step - 1
    while fixed + sum(sizes[s] for s in kept) > max_length:
        victims = [s for s in kept if s != required]
        if not victims:
            raise ContextOverflow(
                f"{doc.process_id}/{entity.name} step {step}: sentence {required} alone needs "
                f"{fixed + sizes[required]} tokens, limit is {max_length}"
            )
        kept.remove(victims[0])
        dropped.append(victims[0])
    if dropped:
        logger.debug("Dropped sentences %s from %s/%s step %d", dropped, doc.process_id, entity.name, step)

    tokens = [tokenizer.cls_token, *query, tokenizer.sep_token]
    query_range = (1, 1 + len(query))
    class_positions = {}
    for kind, token in CLASS_TOKEN_BY_KIND.items():
        class_positions[kind] = len(tokens)
        tokens.append(token)

    sentence_ranges: dict[int, tuple[int, int]] = {}
    alignment: dict[tuple[int, int], tuple[int, int]] = {}
    for sentence in kept:
        start = len(tokens)
        for word_idx, chunk in enumerate(pieces[sentence]):
            alignment[(sentence, word_idx)] = (len(tokens), len(tokens) + len(chunk))
            tokens.extend(chunk)
        sentence_ranges[sentence] = (start, len(tokens))
    tokens.append(tokenizer.sep_token)

    return ProceduralContext(
        tokens=tuple(tokens),
        token_ids=tuple(tokenizer.convert_tokens_to_ids(tokens)),
        query_range=query_range,
        class_token_positions=class_positions,
        sentence_ranges=sentence_ranges,
        step=step,
        entity=entity,
        subword_alignment=alignment,
        words={sentence: doc.sentences[sentence] for sentence in kept},
        dropped_sentences=tuple(dropped),
    )


@dataclass(frozen=True, slots=True)
class EncoderOutput:
    vectors: torch.Tensor
    pooled: torch.Tensor

    def __post_init__(self) -> None:
        if self.vectors.dim() != 2 or self.pooled.shape != self.vectors.shape[-1:]:
            raise ValueError(f"Unexpected encoder shapes {tuple(self.vectors.shape)} / {tuple(self.pooled.shape)}")
        if not torch.isfinite(self.vectors).all():
            raise ModelNumericsError("Encoder produced non-finite vectors")

    @property
    def hidden_size(self) -> int:
        return self.vectors.shape[-1]


def pad_contexts(contexts: Sequence[ProceduralContext], pad_id: int) -> tuple[torch.Tensor, torch.Tensor]:
    width = max(len(ctx) for ctx in contexts)
    input_ids = torch.full((len(contexts), width), pad_id, dtype=torch.long)
    attention = torch.zeros((len(contexts), width), dtype=torch.long)
    for row, ctx in enumerate(contexts):
        input_ids[row, : len(ctx)] = torch.tensor(ctx.token_ids, dtype=torch.long)
        attention[row, : len(ctx)] = 1
    return input_ids, attention


class ContextEncoder(nn.Module):
    hidden_size: int

    def forward(self, input_ids: torch.Tensor, attention_mask: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        raise NotImplementedError

    @torch.no_grad()
    def encode(self, ctx: ProceduralContext) -> EncoderOutput:
        device = next(self.parameters()).device
        input_ids = torch.tensor([ctx.token_ids], dtype=torch.long, device=device)
        attention = torch.ones_like(input_ids)
        vectors, pooled = self(input_ids, attention)
        return EncoderOutput(vectors[0], pooled[0])


class TinyEncoder(ContextEncoder):
    def __init__(
        self,
        vocab_size: int,
        hidden_size: int = 64,
        num_layers: int = 2,
        num_heads: int = 4,
        dropout: float = 0.1,
        max_length: int = 512,
    ) -> None:
        super().__init__()
        self.hidden_size = hidden_size
        self.token_embeddings = nn.Embedding(vocab_size, hidden_size, padding_idx=0)
        self.position_embeddings = nn.Embedding(max_length, hidden_size)
        layer = nn.TransformerEncoderLayer(
            d_model=hidden_size,
            nhead=num_heads,
            dim_feedforward=4 * hidden_size,
            dropout=dropout,
            batch_first=True,
        )
        self.layers = nn.TransformerEncoder(layer, num_layers=num_layers, enable_nested_tensor=False)
        self.norm = nn.LayerNorm(hidden_size)

    def forward(self, input_ids: torch.Tensor, attention_mask: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        positions = torch.arange(input_ids.shape[1], device=input_ids.device).unsqueeze(0)
        hidden = self.token_embeddings(input_ids) + self.position_embeddings(positions)
        hidden = self.layers(hidden, src_key_padding_mask=attention_mask == 0)
        vectors = self.norm(hidden)
        return vectors, vectors[:, 0]


class PretrainedEncoder(ContextEncoder):
    def __init__(self, name_or_path: str, vocab_size: int) -> None:
        super().__init__()
        from transformers import AutoModel

        try:
            self.model = AutoModel.from_pretrained(name_or_path)
        except OSError as exc:
            raise EncoderFailure(f"Cannot load encoder weights from {name_or_path}: {exc}") from exc
        self.model.resize_token_embeddings(vocab_size)
        self.hidden_size = self.model.config.hidden_size

    def forward(self, input_ids: torch.Tensor, attention_mask: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        try:
            outputs = self.model(input_ids=input_ids, attention_mask=attention_mask, return_dict=True)
        except RuntimeError as exc:
            raise EncoderFailure(f"Encoder forward pass failed: {exc}") from exc
        vectors = outputs.last_hidden_state
        return vectors, vectors[:, 0]


def resolve_pretrained_path(configured: str | None) -> str:
    return configured or os.environ.get(PRETRAINED_DIR_ENV) or DEFAULT_PRETRAINED_NAME


def build_backend(
    config: TrainConfig,
    docs: Iterable[Document] = (),
    vocab_tokens: Sequence[str] | None = None,
) -> tuple[ContextTokenizer, ContextEncoder]:
    """Create the tokenizer/encoder pair named by `config.encoder`."""
    if config.encoder == "tiny":
        vocab = WordVocab.from_tokens(vocab_tokens) if vocab_tokens is not None else WordVocab.from_documents(docs)
        encoder = TinyEncoder(
            vocab_size=len(vocab),
            hidden_size=config.tiny_hidden,
            num_layers=config.tiny_layers,
            num_heads=config.tiny_heads,
            dropout=config.tiny_dropout,
            max_length=config.max_length,
        )
        logger.info("Tiny encoder: vocab %d, hidden %d, %d layers", len(vocab), config.tiny_hidden, config.tiny_layers)
        return vocab, encoder

    path = resolve_pretrained_path(config.pretrained_path)
    tokenizer = PretrainedTokenizer(path)
    encoder = PretrainedEncoder(path, len(tokenizer))
    logger.info("Pretrained encoder %s: hidden %d", path, encoder.hidden_size)
    return tokenizer, encoder
