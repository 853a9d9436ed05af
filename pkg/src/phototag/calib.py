"""Posterior calibration backend.

A scoring run indexes raw classifier activations for a held-out corpus. The
calibration table holds one bias per tag; the posterior for a photo is
sigmoid(logit + bias). A human inspects photos whose posterior sits near a
target (0.9 by convention), marks them correct or incorrect, and the bias
suggestion scans the judged logit range for the bias whose inspection window
best agrees with the target precision. Judgments are journaled append-only
with last-write-wins per (photo, tag).

Because unlabeled corpus items cannot be treated as negatives (the
positive/unlabeled trap), only explicit human judgments enter the bias
search.
"""

from __future__ import annotations

import json
import math
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .multilabel import posterior, posterior_to_logit


class UnknownTagError(KeyError):
    pass


class DisabledTagError(ValueError):
    pass


class InsufficientJudgmentsError(ValueError):
    pass


class OneSidedJudgmentsError(ValueError):
    """All judgments incorrect: no bias can hit the target precision."""


# ---------------------------------------------------------------------------
# Score index

@dataclass
class ScoreIndex:
    """Per tag: (photo_id, logit) sorted by logit descending, photo_id ties
    resolved lexicographically."""

    scores: dict[str, list[tuple[str, float]]] = field(default_factory=dict)

    def add(self, tag: str, photo_id: str, logit: float):
        if not math.isfinite(logit):
            raise ValueError("logits must be finite")
        self.scores.setdefault(tag, []).append((photo_id, float(logit)))

    def finalize(self):
        for rows in self.scores.values():
            rows.sort(key=lambda t: (-t[1], t[0]))

    def tag_rows(self, tag: str) -> list[tuple[str, float]]:
        if tag not in self.scores:
            raise UnknownTagError(tag)
        return self.scores[tag]

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            for tag in sorted(self.scores):
                for photo_id, logit in self.scores[tag]:
                    f.write(f"{tag}\t{photo_id}\t{logit!r}\n")

    @classmethod
    def load(cls, path) -> "ScoreIndex":
        index = cls()
        for line in open(path, encoding="utf-8"):
            line = line.rstrip("\n")
            if not line:
                continue
            tag, photo_id, logit = line.split("\t")
            index.add(tag, photo_id, float(logit))
        index.finalize()
        return index


def score_corpus(network, images: dict[str, np.ndarray], vocab: list[str],
                 crop_size: int, batch_size: int = 64) -> tuple[ScoreIndex, int]:
    """Run test-mode center-crop forward passes over a photo corpus.

    Returns (index, skipped_count); unreadable images are skipped, not fatal.
    """
    from .network import augment, _to_nchw

    head_classes = network.head.num_classes
    if head_classes != len(vocab):
        raise ValueError(f"checkpoint predicts {head_classes} classes, vocabulary has {len(vocab)}")

    index = ScoreIndex()
    skipped = 0
    ids, crops = [], []

    def flush():
        if not ids:
            return
        logits = network.predict(_to_nchw(np.stack(crops)))
        for row, pid in enumerate(ids):
            for col, tag in enumerate(vocab):
                index.add(tag, pid, float(logits[row, col]))
        ids.clear()
        crops.clear()

    for photo_id in sorted(images):
        img = images[photo_id]
        try:
            if img.ndim != 3 or img.shape[2] != 3 or not np.all(np.isfinite(img)):
                raise ValueError("bad image")
            crop = augment(np.asarray(img, dtype=np.float32), "test", crop_h=crop_size, crop_w=crop_size)
        except ValueError:
            skipped += 1
            continue
        ids.append(photo_id)
        crops.append(crop)
        if len(ids) == batch_size:
            flush()
    flush()
    index.finalize()
    return index, skipped


# ---------------------------------------------------------------------------
# Calibration table

TABLE_VERSION = 2
_TABLE_MAGIC = "phototag-calibtable"


@dataclass
class TagCalibration:
    bias: float = 0.0
    enabled: bool = True
    last_modified: str = ""


class CalibrationTable:
    """Per-tag bias and enabled flag; mutations stamp last_modified."""

    def __init__(self, tags=()):
        self.entries: dict[str, TagCalibration] = {t: TagCalibration() for t in tags}

    def ensure(self, tag: str) -> TagCalibration:
        return self.entries.setdefault(tag, TagCalibration())

    def get(self, tag: str) -> TagCalibration:
        if tag not in self.entries:
            raise UnknownTagError(tag)
        return self.entries[tag]

    def set_bias(self, tag: str, bias: float, stamp: str | None = None):
        if not math.isfinite(bias):
            raise ValueError("bias must be finite")
        entry = self.ensure(tag)
        entry.bias = float(bias)
        entry.last_modified = stamp if stamp is not None else _now_stamp()

    def set_enabled(self, tag: str, flag: bool, stamp: str | None = None):
        entry = self.ensure(tag)
        entry.enabled = bool(flag)
        entry.last_modified = stamp if stamp is not None else _now_stamp()

    def save(self, path):
        tmp = str(path) + ".tmp"
        with open(tmp, "w", encoding="utf-8") as f:
            f.write(f"{_TABLE_MAGIC}\t{TABLE_VERSION}\n")
            for tag in sorted(self.entries):
                e = self.entries[tag]
                f.write(f"{tag}\t{e.bias!r}\t{int(e.enabled)}\t{e.last_modified}\n")
        os.replace(tmp, path)

    @classmethod
    def load(cls, path) -> "CalibrationTable":
        table = cls()
        with open(path, encoding="utf-8") as f:
            header = f.readline().rstrip("\n").split("\t")
            if len(header) != 2 or header[0] != _TABLE_MAGIC:
                raise ValueError("not a calibration table file")
            version = int(header[1])
            if version > TABLE_VERSION:
                raise ValueError(f"table written by future format version {version}")
            for line in f:
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if version == 1:
                    tag, bias, enabled = parts
                    stamp = ""
                else:
                    tag, bias, enabled, stamp = parts
                table.entries[tag] = TagCalibration(float(bias), bool(int(enabled)), stamp)
        return table


def _now_stamp() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime())


# ---------------------------------------------------------------------------
# Judgment journal

@dataclass(frozen=True)
class Judgment:
    photo_id: str
    tag: str
    verdict: str  # 'correct' | 'incorrect'
    timestamp: str


class JudgmentJournal:
    """Append-only log; the latest verdict per (photo, tag) wins."""

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self._latest: dict[tuple[str, str], Judgment] = {}
        if self.path and self.path.exists():
            for line in open(self.path, encoding="utf-8"):
                line = line.strip()
                if line:
                    self._apply(Judgment(**json.loads(line)))

    def _apply(self, j: Judgment):
        self._latest[(j.tag, j.photo_id)] = j

    def record(self, photo_id: str, tag: str, verdict: str, timestamp: str | None = None):
        if verdict not in ("correct", "incorrect"):
            raise ValueError("verdict must be 'correct' or 'incorrect'")
        j = Judgment(photo_id, tag, verdict, timestamp or _now_stamp())
        if self.path:
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(json.dumps(j.__dict__) + "\n")
        self._apply(j)
        return j

    def for_tag(self, tag: str) -> dict[str, str]:
        """photo_id -> latest verdict."""
        return {pid: j.verdict for (t, pid), j in self._latest.items() if t == tag}

    def count(self, tag: str) -> int:
        return sum(1 for (t, _) in self._latest if t == tag)


# ---------------------------------------------------------------------------
# Queries

def top_scoring(index: ScoreIndex, table: CalibrationTable, tag: str, n: int):
    """Highest-logit photos; bias-independent because the posterior is
    monotone in the logit."""
    _require_enabled(table, tag)
    return index.tag_rows(tag)[:n]


def around_posterior(index: ScoreIndex, table: CalibrationTable, tag: str, p: float, n: int):
    """The n photos whose posterior is nearest p, posteriors attached."""
    if not 0.0 < p < 1.0:
        raise ValueError("p must be in (0, 1)")
    entry = _require_enabled(table, tag)
    rows = index.tag_rows(tag)
    ranked = sorted(rows, key=lambda r: (abs(posterior(r[1], entry.bias) - p), r[0]))
    return [(pid, logit, posterior(logit, entry.bias)) for pid, logit in ranked[:n]]


def _require_enabled(table: CalibrationTable, tag: str) -> TagCalibration:
    entry = table.get(tag)
    if not entry.enabled:
        raise DisabledTagError(f"tag {tag!r} is disabled")
    return entry


@dataclass(frozen=True)
class BiasSuggestion:
    bias: float
    window_precision: float
    judged_in_window: int
    unconstrained: bool  # all judgments correct: only a boundary is known


def suggest_bias(index: ScoreIndex, journal: JudgmentJournal, tag: str,
                 target_p: float = 0.9, window: float = 0.05,
                 min_judgments: int = 10) -> BiasSuggestion:
    """Scan candidate biases over the judged items' logit range and pick the
    one whose posterior window [target_p - window, target_p + window] has
    empirical precision closest to target_p.

    The windowed precision is a step function of the bias with breakpoints at
    the judged logits, so evaluating the candidates b = logit(target_p) - s
    for every judged logit s is an exact search. Exact ties prefer the
    largest bias. All-correct evidence only bounds the bias from below
    (the window can only be pushed toward lower logits), so the result is
    flagged unconstrained.
    """
    if not (0.0 < target_p - window and target_p + window < 1.0):
        raise ValueError("target_p +/- window must stay inside (0, 1)")
    verdicts = journal.for_tag(tag)
    if len(verdicts) < min_judgments:
        raise InsufficientJudgmentsError(f"need >= {min_judgments} judgments, have {len(verdicts)}")

    logit_of = {pid: s for pid, s in index.tag_rows(tag)}
    judged = [(logit_of[pid], verdicts[pid] == "correct") for pid in verdicts if pid in logit_of]
    if len(judged) < min_judgments:
        raise InsufficientJudgmentsError("judged photos missing from the score index")
    judged.sort(key=lambda t: -t[0])

    n_correct = sum(1 for _, ok in judged if ok)
    if n_correct == 0:
        raise OneSidedJudgmentsError("all judgments incorrect; no bias reaches the target")
    unconstrained = n_correct == len(judged)

    lo = posterior_to_logit(target_p - window)
    hi = posterior_to_logit(target_p + window)
    center = posterior_to_logit(target_p)

    best = None  # (abs error, -bias, precision, count)
    for s, _ in judged:
        b = center - s
        in_window = [ok for sj, ok in judged if lo <= sj + b <= hi]
        if not in_window:
            continue
        precision = sum(in_window) / len(in_window)
        key = (abs(precision - target_p), -b)
        if best is None or key < best[0]:
            best = (key, b, precision, len(in_window))
    assert best is not None  # every candidate window holds its anchor item
    return BiasSuggestion(best[1], best[2], best[3], unconstrained)


# ---------------------------------------------------------------------------
# Service facade: serializes writes per tag, journal appends are atomic.

class CalibrationService:
    def __init__(self, index: ScoreIndex, table: CalibrationTable,
                 journal: JudgmentJournal, table_path=None, corpus_dir=None):
        self.index = index
        self.table = table
        self.journal = journal
        self.table_path = table_path
        self.corpus_dir = Path(corpus_dir) if corpus_dir else None
        self._tag_locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()
        self._journal_lock = threading.Lock()
        self._persist_lock = threading.Lock()
        for tag in index.scores:
            table.ensure(tag)

    def _lock_for(self, tag: str) -> threading.Lock:
        with self._locks_guard:
            return self._tag_locks.setdefault(tag, threading.Lock())

    def tags(self):
        return [
            {
                "tag": tag,
                "bias": self.table.ensure(tag).bias,
                "enabled": self.table.ensure(tag).enabled,
                "photos": len(rows),
                "judgments": self.journal.count(tag),
            }
            for tag, rows in sorted(self.index.scores.items())
        ]

    def top(self, tag, n):
        return top_scoring(self.index, self.table, tag, n)

    def around(self, tag, p, n):
        return around_posterior(self.index, self.table, tag, p, n)

    def set_bias(self, tag, bias):
        if tag not in self.index.scores:
            raise UnknownTagError(tag)
        with self._lock_for(tag):
            self.table.set_bias(tag, bias)
            self._persist()

    def set_enabled(self, tag, flag):
        if tag not in self.index.scores:
            raise UnknownTagError(tag)
        with self._lock_for(tag):
            self.table.set_enabled(tag, flag)
            self._persist()

    def judge(self, tag, photo_id, verdict):
        if tag not in self.index.scores:
            raise UnknownTagError(tag)
        with self._journal_lock:
            return self.journal.record(photo_id, tag, verdict)

    def suggest(self, tag, target_p=0.9, window=0.05):
        if tag not in self.index.scores:
            raise UnknownTagError(tag)
        return suggest_bias(self.index, self.journal, tag, target_p, window)

    def _persist(self):
        if self.table_path:
            with self._persist_lock:
                self.table.save(self.table_path)
