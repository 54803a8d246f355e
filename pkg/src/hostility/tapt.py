"""Task-adaptive corpus construction and continued MLM pretraining.

The adaptation corpus holds each post twice: the raw text and its
cleaned text. Training produces weights for the cleaned-text encoder
only; the hashtag encoder keeps the base initialization.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .checkpoint import checkpoint_bytes, read_checkpoint
from .encoder import (
    EncoderConfig,
    EncoderWeights,
    Vocab,
    config_from_meta,
    config_to_meta,
    N_SPECIALS,
    encode_ids,
    mask_tokens,
    mlm_loss,
)
from .errors import DataError, InvariantError
from .numeric import add, adam_init, adam_step, backward, scale, zero_grad
from .preprocess import RawPost, clean_text, tokenize_raw

RAW = "raw"
CLEANED = "cleaned"

TEXT_INIT_STREAM = 0
HASHTAG_INIT_STREAM = 1
_TRAIN_STREAM = 5


@dataclass
class TaptCorpus:
    lines: list[str]
    provenance: list[str]

    def __post_init__(self):
        if len(self.lines) != len(self.provenance):
            raise InvariantError("corpus lines and provenance tags diverge")


def build_tapt_corpus(posts: Sequence[RawPost], include_cleaned: bool = True) -> TaptCorpus:
    """One RAW line (the original text) and one CLEANED line per post,
    in dataset order. Empty cleaned text still contributes its line."""
    lines: list[str] = []
    provenance: list[str] = []
    for post in posts:
        lines.append(post.text)
        provenance.append(RAW)
        if include_cleaned:
            lines.append(clean_text(tokenize_raw(post.text)))
            provenance.append(CLEANED)
    return TaptCorpus(lines, provenance)


def dump_corpus(corpus: TaptCorpus, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for line, tag in zip(corpus.lines, corpus.provenance):
            prefix = "R" if tag == RAW else "C"
            flat = " ".join(line.splitlines()) if "\n" in line or "\r" in line else line
            fh.write(f"{prefix}\t{flat}\n")


@dataclass
class TaptResult:
    weights: EncoderWeights
    epoch_losses: list[float]
    steps: int


def base_init(config: EncoderConfig, seed: int) -> EncoderWeights:
    """The fixed random initialization snapshot TAPT starts from (and the
    fresh cleaned-text encoder when TAPT is off)."""
    return EncoderWeights.init(config, np.random.default_rng([seed, TEXT_INIT_STREAM]))


def run_tapt(
    config: EncoderConfig,
    vocab: Vocab,
    corpus: TaptCorpus,
    epochs: int = 100,
    lr: float = 1e-4,
    batch_size: int = 8,
    seed: int = 0,
    init_weights: EncoderWeights | None = None,
    mask_prob: float = 0.15,
) -> TaptResult:
    """Continued MLM pretraining over shuffled corpus lines.

    Deterministic given the seed. Lines that yield no maskable token
    (e.g. empty cleaned lines) are skipped at batching but keep their
    place in the corpus.
    """
    if epochs < 1:
        raise ValueError(f"epochs must be >= 1, got {epochs}")
    if not 0 < mask_prob <= 1:
        raise ValueError(f"mask_prob must be in (0, 1], got {mask_prob}")
    if not corpus.lines:
        raise ValueError("cannot pretrain on an empty corpus")
    encoded = [encode_ids(vocab, line, config.max_len) for line in corpus.lines]
    if not any(any(t >= N_SPECIALS for t in ids) for ids in encoded):
        raise ValueError("corpus has no maskable tokens under this vocab")
    weights = init_weights.copy() if init_weights is not None else base_init(config, seed)
    rng = np.random.default_rng([seed, _TRAIN_STREAM])
    state = adam_init(weights.params)
    epoch_losses: list[float] = []
    steps = 0
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(encoded))
        loss_total = 0.0
        n_seqs = 0
        for start in range(0, len(order), batch_size):
            nodes = []
            for j in order[start : start + batch_size]:
                ids = encoded[j]
                if all(t < N_SPECIALS for t in ids):
                    continue
                # Independent selection can pick nothing; resample until
                # the line contributes at least one target.
                while True:
                    masked, targets = mask_tokens(ids, len(vocab), rng, mask_prob)
                    if any(t >= 0 for t in targets):
                        break
                nodes.append(mlm_loss(weights, config, masked, targets, training=True, rng=rng))
            if not nodes:
                continue
            total = nodes[0]
            for node in nodes[1:]:
                total = add(total, node)
            batch_loss = scale(total, 1.0 / len(nodes))
            zero_grad(weights.params.values())
            backward(batch_loss)
            adam_step(weights.params, state, lr)
            steps += 1
            loss_total += float(batch_loss.data) * len(nodes)
            n_seqs += len(nodes)
        epoch_loss = loss_total / n_seqs if n_seqs else float("nan")
        if not np.isfinite(epoch_loss):
            raise InvariantError(f"non-finite MLM loss at epoch {epoch}")
        epoch_losses.append(epoch_loss)
    return TaptResult(weights=weights, epoch_losses=epoch_losses, steps=steps)


def encoder_checkpoint_bytes(
    weights: EncoderWeights,
    config: EncoderConfig,
    extra: Mapping[str, str] | None = None,
) -> bytes:
    meta = {"kind": "encoder"}
    meta.update(config_to_meta(config))
    if extra:
        meta.update(extra)
    return checkpoint_bytes(meta, weights.arrays())


def load_encoder_checkpoint(path) -> tuple[EncoderWeights, EncoderConfig, dict[str, str]]:
    metadata, arrays = read_checkpoint(path)
    if metadata.get("kind") != "encoder":
        raise DataError(f"{path}: checkpoint does not hold encoder weights")
    config = config_from_meta(metadata)
    return EncoderWeights.from_arrays(config, arrays), config, metadata
