"""Social-post parsing and the three model input features.

A raw post is tokenized into classified tokens (words, emojis, hashtags,
mentions, URLs, numbers, reserved markers, smileys), then reduced to a
FeatureBundle: cleaned text (words only), the hashtag flow (segmented
hashtag bodies in order), and the mean emoji embedding.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError


class LabelTag(Enum):
    NON_HOSTILE = "non-hostile"
    FAKE = "fake"
    HATE = "hate"
    OFFENSIVE = "offensive"
    DEFAMATION = "defamation"


FINE_TAGS = (LabelTag.FAKE, LabelTag.HATE, LabelTag.OFFENSIVE, LabelTag.DEFAMATION)
_TAG_BY_NAME = {tag.value: tag for tag in LabelTag}


@dataclass(frozen=True)
class RawPost:
    id: str
    text: str
    labels: frozenset[LabelTag]


class TokenKind(Enum):
    WORD = "word"
    EMOJI = "emoji"
    HASHTAG = "hashtag"
    MENTION = "mention"
    URL = "url"
    NUMBER = "number"
    RESERVED = "reserved"
    SMILEY = "smiley"


@dataclass(frozen=True)
class ClassifiedToken:
    surface: str
    kind: TokenKind


@dataclass(frozen=True)
class FreqDict:
    """Lowercase word counts used to score hashtag segmentations."""

    counts: dict[str, int]
    total: int

    @classmethod
    def from_counts(cls, counts: dict[str, int]) -> "FreqDict":
        return cls(dict(counts), sum(counts.values()))

    @classmethod
    def empty(cls) -> "FreqDict":
        return cls({}, 0)


@dataclass(frozen=True)
class EmojiTable:
    dim: int
    entries: dict[str, np.ndarray]


@dataclass(frozen=True)
class FeatureBundle:
    cleaned_text: str
    hashtag_flow: str
    emoji_vec: np.ndarray
    emoji_count: int


SEPARATORS = ",;:"
_SEP_SPLIT = re.compile(r"[,;:]+")
_URL = re.compile(r"^(https?://|www\.)\S+$")
RESERVED_WORDS = frozenset({"RT", "FAV"})
# Only whole whitespace-delimited tokens count as smileys; the separator
# split would otherwise tear ':' off them.
SMILEYS = frozenset({":)", ":(", ":D", ";)", ":P", ":/"})

# Emoticons, Misc Symbols & Pictographs, Supplemental Symbols, Transport,
# plus the U+2600 and U+2700 blocks.
_EMOJI_RANGES = (
    (0x1F300, 0x1F5FF),
    (0x1F600, 0x1F64F),
    (0x1F680, 0x1F6FF),
    (0x1F900, 0x1F9FF),
    (0x2600, 0x26FF),
    (0x2700, 0x27BF),
)
_ZWJ = 0x200D
_VARIATION_SELECTOR = 0xFE0F
_SKIN_TONES = (0x1F3FB, 0x1F3FF)


def _is_emoji_base(ch: str) -> bool:
    cp = ord(ch)
    return any(lo <= cp <= hi for lo, hi in _EMOJI_RANGES)


def _is_emoji_modifier(ch: str) -> bool:
    cp = ord(ch)
    return cp == _VARIATION_SELECTOR or _SKIN_TONES[0] <= cp <= _SKIN_TONES[1]


def _take_emoji_grapheme(text: str, start: int) -> int:
    """Return the end index of the emoji grapheme starting at text[start]."""
    i = start + 1
    while i < len(text) and _is_emoji_modifier(text[i]):
        i += 1
    # ZWJ sequences (e.g. family emoji) stay one grapheme.
    while i + 1 < len(text) and ord(text[i]) == _ZWJ and _is_emoji_base(text[i + 1]):
        i += 2
        while i < len(text) and _is_emoji_modifier(text[i]):
            i += 1
    return i


def _classify_plain(segment: str) -> TokenKind:
    if segment in RESERVED_WORDS:
        return TokenKind.RESERVED
    if any(ch.isdigit() for ch in segment):
        return TokenKind.NUMBER
    return TokenKind.WORD


def _scan_segment(segment: str, out: list[ClassifiedToken]) -> None:
    """Split emoji graphemes out of a segment and classify the rest."""
    buf_start = 0
    i = 0
    while i < len(segment):
        if _is_emoji_base(segment[i]):
            if buf_start < i:
                word = segment[buf_start:i]
                out.append(ClassifiedToken(word, _classify_plain(word)))
            end = _take_emoji_grapheme(segment, i)
            out.append(ClassifiedToken(segment[i:end], TokenKind.EMOJI))
            i = end
            buf_start = i
        else:
            i += 1
    if buf_start < len(segment):
        word = segment[buf_start:]
        out.append(ClassifiedToken(word, _classify_plain(word)))


def tokenize_raw(text: str) -> list[ClassifiedToken]:
    """Split text on whitespace plus commas, colons and semicolons and
    classify every resulting token.

    URL-shaped tokens and '#'/'@'-prefixed tokens are kept intact rather
    than split on internal separators.
    """
    tokens: list[ClassifiedToken] = []
    for raw_piece in text.split():
        # Smileys start with ':'/';' so they must be recognized before
        # boundary separators are stripped.
        if raw_piece in SMILEYS:
            tokens.append(ClassifiedToken(raw_piece, TokenKind.SMILEY))
            continue
        piece = raw_piece.strip(SEPARATORS)
        if not piece:
            continue
        if _URL.match(piece):
            tokens.append(ClassifiedToken(piece, TokenKind.URL))
            continue
        if piece[0] == "#":
            tokens.append(ClassifiedToken(piece, TokenKind.HASHTAG))
            continue
        if piece[0] == "@":
            tokens.append(ClassifiedToken(piece, TokenKind.MENTION))
            continue
        for sub in _SEP_SPLIT.split(piece):
            if not sub:
                continue
            if _URL.match(sub):
                tokens.append(ClassifiedToken(sub, TokenKind.URL))
            elif sub[0] == "#":
                tokens.append(ClassifiedToken(sub, TokenKind.HASHTAG))
            elif sub[0] == "@":
                tokens.append(ClassifiedToken(sub, TokenKind.MENTION))
            else:
                _scan_segment(sub, tokens)
    return tokens


def clean_text(tokens: Iterable[ClassifiedToken]) -> str:
    """Join WORD surfaces with single spaces, dropping every other kind."""
    return " ".join(t.surface for t in tokens if t.kind is TokenKind.WORD)


def _word_score(word: str, freq: FreqDict) -> float:
    count = freq.counts.get(word)
    if count is not None:
        return math.log(count / freq.total)
    # Zipf-style out-of-vocabulary penalty, exponential in word length.
    total = max(freq.total, 1)
    return -(math.log(total) + len(word) * math.log(10))


def segment_hashtag(tag: str, freq: FreqDict) -> str:
    """Split a hashtag body into the highest-scoring word sequence.

    Scores are summed per-word unigram log probabilities with a
    length-exponential penalty for unknown words. Ties prefer fewer
    words, then the lexicographically smallest result. The concatenation
    of the output equals the case-folded tag body.
    """
    if not tag.startswith("#"):
        raise ValueError(f"hashtag must start with '#', got {tag!r}")
    body = tag[1:].casefold()
    if not body:
        raise ValueError("hashtag body is empty")
    if any(ch.isspace() for ch in body):
        raise ValueError(f"hashtag body contains whitespace: {tag!r}")
    n = len(body)
    # best[i]: (score, word count, joined words) for body[:i]; higher
    # score wins, then fewer words, then the smaller string.
    best: list[tuple[float, int, str] | None] = [None] * (n + 1)
    best[0] = (0.0, 0, "")
    for i in range(1, n + 1):
        for j in range(i):
            prev = best[j]
            if prev is None:
                continue
            word = body[j:i]
            score = prev[0] + _word_score(word, freq)
            joined = word if j == 0 else f"{prev[2]} {word}"
            cand = (score, prev[1] + 1, joined)
            cur = best[i]
            if (
                cur is None
                or cand[0] > cur[0]
                or (cand[0] == cur[0] and (cand[1], cand[2]) < (cur[1], cur[2]))
            ):
                best[i] = cand
    return best[n][2]


def mean_emoji_vector(emojis: Sequence[str], table: EmojiTable) -> np.ndarray:
    """Arithmetic mean of the table vectors of the given emojis.

    Emojis without an entry are skipped; with nothing left the zero
    vector is returned.
    """
    known = [table.entries[e] for e in emojis if e in table.entries]
    if not known:
        return np.zeros(table.dim, dtype=np.float32)
    # Accumulate in float64 so k copies of one vector average back exactly.
    return np.mean(np.stack(known), axis=0, dtype=np.float64).astype(np.float32)


def extract_features(text: str, freq: FreqDict, table: EmojiTable) -> FeatureBundle:
    tokens = tokenize_raw(text)
    cleaned = clean_text(tokens)
    flows = [
        segment_hashtag(t.surface, freq)
        for t in tokens
        if t.kind is TokenKind.HASHTAG and len(t.surface) > 1
    ]
    emojis = [t.surface for t in tokens if t.kind is TokenKind.EMOJI]
    return FeatureBundle(
        cleaned_text=cleaned,
        hashtag_flow=" ".join(flows),
        emoji_vec=mean_emoji_vector(emojis, table),
        emoji_count=len(emojis),
    )


# ---------------------------------------------------------------------------
# File loaders
# ---------------------------------------------------------------------------


def load_emoji_table(path) -> EmojiTable:
    """Parse the embedding file: "<count> <dim>" header, then one
    "<grapheme> <f_1> ... <f_dim>" line per emoji."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DataError(f"{path}: empty emoji table")
    header = lines[0].split()
    if len(header) != 2:
        raise DataError(f"{path}: line 1: header must be '<count> <dim>'")
    try:
        count, dim = int(header[0]), int(header[1])
    except ValueError:
        raise DataError(f"{path}: line 1: header must be two integers") from None
    if count < 0 or dim <= 0:
        raise DataError(f"{path}: line 1: bad count/dim {count} {dim}")
    entries: dict[str, np.ndarray] = {}
    for ln, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split(" ")
        if len(fields) != dim + 1:
            raise DataError(f"{path}: line {ln}: expected {dim} floats, got {len(fields) - 1}")
        try:
            vec = np.array([float(x) for x in fields[1:]], dtype=np.float32)
        except ValueError:
            raise DataError(f"{path}: line {ln}: malformed float") from None
        entries[fields[0]] = vec
    if len(entries) != count:
        raise DataError(f"{path}: header declares {count} entries, found {len(entries)}")
    return EmojiTable(dim=dim, entries=entries)


def load_freq_dict(path) -> FreqDict:
    """Parse "<word>\\t<count>" lines into a FreqDict; words are case-folded."""
    counts: dict[str, int] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for ln, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            word, sep, count_str = line.partition("\t")
            if not sep or not word:
                raise DataError(f"{path}: line {ln}: expected '<word>\\t<count>'")
            try:
                count = int(count_str)
            except ValueError:
                raise DataError(f"{path}: line {ln}: count is not an integer") from None
            if count <= 0:
                raise DataError(f"{path}: line {ln}: count must be positive")
            word = word.casefold()
            counts[word] = counts.get(word, 0) + count
    return FreqDict.from_counts(counts)


def parse_labels(field: str) -> frozenset[LabelTag]:
    if not field:
        return frozenset()
    tags = set()
    for name in field.split("|"):
        tag = _TAG_BY_NAME.get(name)
        if tag is None:
            raise DataError(f"unknown label {name!r}")
        tags.add(tag)
    if LabelTag.NON_HOSTILE in tags and len(tags) > 1:
        raise DataError("non-hostile cannot combine with other labels")
    return frozenset(tags)


def load_dataset(path) -> list[RawPost]:
    """Parse the delimited dataset: header "id,text,labels", double-quoted
    text with doubled-quote escaping, '|'-joined lowercase labels."""
    posts = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty dataset file") from None
        if header != ["id", "text", "labels"]:
            raise DataError(f"{path}: line 1: header must be id,text,labels")
        for row in reader:
            if not row:
                continue
            if len(row) != 3:
                raise DataError(f"{path}: line {reader.line_num}: expected 3 fields, got {len(row)}")
            try:
                labels = parse_labels(row[2])
            except DataError as exc:
                raise DataError(f"{path}: line {reader.line_num}: {exc}") from None
            posts.append(RawPost(id=row[0], text=row[1], labels=labels))
    return posts
