"""Tag statistics, vocabulary selection, and training-set construction over
user-generated photo metadata.

Metadata arrives as UTF-8 tab-separated lines: photo_id, user_id, title,
description, tags — with tags comma-separated and percent-encoded. Tags
normalize to lowercase with inner whitespace collapsed to '+', so a
multiword tag stays a single token ("square+format").

Ranking by raw photo count surfaces uploader-bot artifacts; ranking by the
number of distinct users who used a tag surfaces concepts people actually
search for. Vocabulary selection drops numbers, listed locations, listed
non-English terms, and listed sensitive terms, with manual keep/drop
overrides winning; every decision is recorded so the pipeline stays
auditable.
"""

from __future__ import annotations

import math
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from urllib.parse import unquote

DEFAULT_FIELD_WEIGHTS = {"tags": 1.0, "title": 0.5, "description": 0.25}
NUMBER_PATTERN = re.compile(r"^\d{1,4}$")
_TOKEN_SPLIT = re.compile(r"[^\w+]+", re.UNICODE)


def normalize_tag(raw: str) -> str:
    return "+".join(raw.strip().lower().split())


def tokenize_field(text: str) -> list[str]:
    """Lowercased unigram tokens; '+'-joined tokens survive as single units."""
    return [t for t in _TOKEN_SPLIT.split(text.lower()) if t]


@dataclass(frozen=True)
class PhotoRecord:
    photo_id: str
    user_id: str
    title: str
    description: str
    tags: tuple[str, ...]


@dataclass
class IngestResult:
    records: list[PhotoRecord]
    skipped_lines: int = 0


def ingest_metadata(lines) -> IngestResult:
    """Parse metadata lines; malformed lines are counted and skipped."""
    result = IngestResult([])
    for line in lines:
        line = line.rstrip("\n")
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 5 or not parts[0] or not parts[1]:
            result.skipped_lines += 1
            continue
        photo_id, user_id, title, description, tag_field = parts
        tags = tuple(
            dict.fromkeys(  # preserve order, drop duplicates
                normalize_tag(unquote(t)) for t in tag_field.split(",") if t.strip()
            )
        )
        result.records.append(PhotoRecord(photo_id, user_id, title, description, tags))
    return result


def ingest_metadata_file(path) -> IngestResult:
    with open(path, encoding="utf-8") as f:
        return ingest_metadata(f)


# ---------------------------------------------------------------------------
# Statistics and ranking

@dataclass
class TagStats:
    photo_count: Counter = field(default_factory=Counter)
    user_count: Counter = field(default_factory=Counter)

    def count(self, key: str) -> Counter:
        if key == "photo_count":
            return self.photo_count
        if key == "user_count":
            return self.user_count
        raise KeyError(key)


def compute_tag_stats(records) -> TagStats:
    """photo_count: photos containing the tag; user_count: distinct users."""
    stats = TagStats()
    users_per_tag: dict[str, set[str]] = defaultdict(set)
    for rec in records:
        for tag in set(rec.tags):
            stats.photo_count[tag] += 1
            users_per_tag[tag].add(rec.user_id)
    for tag, users in users_per_tag.items():
        stats.user_count[tag] = len(users)
    return stats


def rank_tags(stats: TagStats, key: str, n: int) -> list[tuple[str, int]]:
    """Top-n by the chosen count; ties break lexicographically."""
    if n < 1:
        raise ValueError("n must be >= 1")
    counter = stats.count(key)
    ranked = sorted(counter.items(), key=lambda kv: (-kv[1], kv[0]))
    return ranked[:n]


# ---------------------------------------------------------------------------
# Exclusions

class ConflictingOverridesError(ValueError):
    """A tag appears in both the manual keep and manual drop lists."""


@dataclass
class ExclusionRules:
    number_pattern: re.Pattern = NUMBER_PATTERN
    locations: frozenset[str] = frozenset()
    nonenglish: frozenset[str] = frozenset()
    sensitive: frozenset[str] = frozenset()
    manual_keep: frozenset[str] = frozenset()
    manual_drop: frozenset[str] = frozenset()

    def __post_init__(self):
        self.manual_keep = frozenset(self.manual_keep)
        self.manual_drop = frozenset(self.manual_drop)
        conflict = self.manual_keep & self.manual_drop
        if conflict:
            raise ConflictingOverridesError(f"tags in both keep and drop lists: {sorted(conflict)}")
        # Keep wins: resolve the term lists against it up front.
        self.locations = frozenset(self.locations) - self.manual_keep
        self.nonenglish = frozenset(self.nonenglish) - self.manual_keep
        self.sensitive = frozenset(self.sensitive) - self.manual_keep

    def decide(self, tag: str) -> tuple[bool, str]:
        """(keep?, reason)."""
        if tag in self.manual_keep:
            return True, "manual-keep"
        if tag in self.manual_drop:
            return False, "manual-drop"
        if self.number_pattern.match(tag):
            return False, "number"
        if tag in self.locations:
            return False, "location"
        if tag in self.nonenglish:
            return False, "non-english"
        if tag in self.sensitive:
            return False, "sensitive"
        return True, "retained"


def _load_terms(path) -> frozenset[str]:
    out = set()
    for line in open(path, encoding="utf-8"):
        line = line.split("#", 1)[0].strip()
        if line:
            out.add(normalize_tag(line))
    return frozenset(out)


def load_rules(rules_dir) -> ExclusionRules:
    """Load the editable term-list fixtures from a directory."""
    d = Path(rules_dir)

    def maybe(name):
        p = d / name
        return _load_terms(p) if p.exists() else frozenset()

    return ExclusionRules(
        locations=maybe("locations.txt"),
        nonenglish=maybe("nonenglish.txt"),
        sensitive=maybe("sensitive.txt"),
        manual_keep=maybe("keep.txt"),
        manual_drop=maybe("drop.txt"),
    )


@dataclass(frozen=True)
class VocabEntry:
    tag: str
    rank: int
    photo_count: int
    user_count: int
    decision: str  # 'retained' or the exclusion reason


@dataclass
class Vocabulary:
    """Retained tags in ranking order, plus the full decision log."""

    entries: list[VocabEntry]
    decisions: list[VocabEntry]

    @property
    def tags(self) -> list[str]:
        return [e.tag for e in self.entries]

    def __len__(self):
        return len(self.entries)


def apply_exclusions(ranking: list[tuple[str, int]], rules: ExclusionRules,
                     stats: TagStats | None = None) -> Vocabulary:
    entries = []
    decisions = []
    for rank, (tag, count) in enumerate(ranking, start=1):
        keep, reason = rules.decide(tag)
        photo = stats.photo_count[tag] if stats else count
        user = stats.user_count[tag] if stats else count
        entry = VocabEntry(tag, rank, photo, user, reason)
        decisions.append(entry)
        if keep:
            entries.append(entry)
    return Vocabulary(entries, decisions)


# ---------------------------------------------------------------------------
# tf-idf scoring and training-set construction

@dataclass
class CorpusIndex:
    """Per-field document frequencies over the whole corpus."""

    n_docs: int
    df: dict[str, Counter]  # field -> token -> docs containing it

    @classmethod
    def build(cls, records) -> "CorpusIndex":
        df = {"title": Counter(), "description": Counter(), "tags": Counter()}
        n = 0
        for rec in records:
            n += 1
            for fname, tokens in _field_tokens(rec).items():
                for tok in set(tokens):
                    df[fname][tok] += 1
        return cls(n, df)

    def idf(self, field_name: str, token: str) -> float:
        return math.log((self.n_docs + 1) / (self.df[field_name][token] + 1)) + 1.0


def _field_tokens(rec: PhotoRecord) -> dict[str, list[str]]:
    return {
        "title": tokenize_field(rec.title),
        "description": tokenize_field(rec.description),
        "tags": list(rec.tags),
    }


def tfidf_score(record: PhotoRecord, tag: str, index: CorpusIndex,
                weights: dict[str, float] | None = None) -> float:
    """Weighted sum over fields of tf * idf for the normalized tag token."""
    weights = weights or DEFAULT_FIELD_WEIGHTS
    tag = normalize_tag(tag)
    score = 0.0
    for fname, tokens in _field_tokens(record).items():
        tf = tokens.count(tag)
        if tf:
            score += weights.get(fname, 0.0) * tf * index.idf(fname, tag)
    return score


@dataclass
class TrainingSelection:
    tag: str
    photos: list[tuple[str, float]]  # (photo_id, score), best first
    shortfall: bool  # fewer than k scoring candidates existed


def build_training_set(records, vocab: Vocabulary | list[str], k: int,
                       excluded_ids=frozenset(), index: CorpusIndex | None = None,
                       weights: dict[str, float] | None = None) -> dict[str, TrainingSelection]:
    """Per vocabulary tag, the k best-scoring photos not excluded.

    Ties break by photo_id; photos with zero score are not candidates. The
    output is deterministic and independent of record order.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    tags = vocab.tags if isinstance(vocab, Vocabulary) else list(vocab)
    if not tags:
        raise ValueError("empty vocabulary")
    records = list(records)
    if index is None:
        index = CorpusIndex.build(records)
    excluded = set(excluded_ids)

    out: dict[str, TrainingSelection] = {}
    for tag in tags:
        scored = []
        for rec in records:
            if rec.photo_id in excluded:
                continue
            s = tfidf_score(rec, tag, index, weights)
            if s > 0.0:
                scored.append((rec.photo_id, s))
        scored.sort(key=lambda t: (-t[1], t[0]))
        out[tag] = TrainingSelection(tag, scored[:k], shortfall=len(scored) < k)
    return out


# ---------------------------------------------------------------------------
# Vocabulary files: one tag per line, with a provenance sidecar.

def save_vocabulary(path, vocab: Vocabulary):
    path = Path(path)
    with open(path, "w", encoding="utf-8") as f:
        f.writelines(e.tag + "\n" for e in vocab.entries)
    with open(path.with_suffix(path.suffix + ".provenance.tsv"), "w", encoding="utf-8") as f:
        f.write("tag\trank\tphoto_count\tuser_count\tdecision\n")
        for e in vocab.decisions:
            f.write(f"{e.tag}\t{e.rank}\t{e.photo_count}\t{e.user_count}\t{e.decision}\n")


def load_vocabulary_tags(path) -> list[str]:
    return [l.strip() for l in open(path, encoding="utf-8") if l.strip()]
