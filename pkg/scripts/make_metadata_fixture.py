#!/usr/bin/env python3
"""Regenerate the frozen 1000-record metadata fixture.

Deterministic by construction. The corpus is engineered so that the
photo-count and user-count rankings diverge: a single uploader bot stamps
'square format' / 'iphoneography' onto every one of its photos (dominating
photo counts with almost no distinct users), while genuine concept tags like
'sunset' are spread across many users.
"""

import random
from pathlib import Path
from urllib.parse import quote

OUT = Path(__file__).resolve().parents[1] / "src" / "phototag" / "fixtures" / "metadata_1k.tsv"

CONTENT_TAGS = [
    # (tag, relative popularity weight)
    ("sunset", 30), ("beach", 26), ("water", 25), ("sky", 24), ("night", 23),
    ("snow", 20), ("flower", 19), ("tree", 19), ("red", 17), ("blue", 17),
    ("cat", 15), ("dog", 15), ("mountain", 13), ("city", 12), ("portrait", 11),
    ("food", 10), ("bird", 9), ("car", 8), ("bridge", 7), ("lake", 7),
    ("forest", 6), ("rain", 5), ("coffee", 5), ("bicycle", 4), ("street art", 4),
    ("boat", 3), ("garden", 3), ("museum", 2),
]
LOCATION_TAGS = [("california", 8), ("paris", 6), ("tokyo", 5), ("london", 5)]
NUMBER_TAGS = [("2010", 7), ("2011", 6), ("2012", 6), ("2014", 5)]
NONENGLISH_TAGS = [("chien", 4), ("gato", 3), ("fleur", 3)]
SENSITIVE_TAGS = [("old", 3), ("fat", 2)]

TITLES = {
    "sunset": ["golden sunset over the bay", "sunset walk", "a fading sunset"],
    "beach": ["day at the beach", "empty beach morning"],
    "water": ["still water", "water reflections"],
    "cat": ["my cat sleeping", "cat in a box"],
    "dog": ["dog at the park", "happy dog"],
    "flower": ["spring flower", "flower macro"],
}
DESCRIPTIONS = {
    "sunset": ["caught this sunset after work, the colors were unreal"],
    "beach": ["long weekend by the sea, sand everywhere"],
    "cat": ["she sleeps 16 hours a day"],
    "snow": ["first snow of the season"],
}
FILLER_TITLES = ["untitled", "from the archive", "weekend shot", "test roll", "no caption"]
FILLER_DESCS = ["", "", "uploaded from phone", "scanned film", ""]


def weighted_pool(pairs):
    pool = []
    for tag, weight in pairs:
        pool.extend([tag] * weight)
    return pool


def main():
    rng = random.Random(20160415)
    lines = []

    content_pool = weighted_pool(CONTENT_TAGS)
    extra_pool = weighted_pool(LOCATION_TAGS + NUMBER_TAGS + NONENGLISH_TAGS + SENSITIVE_TAGS)

    # 180 bot uploads: one user, few tags, each stamped on every photo.
    for i in range(180):
        tags = ["square format", "iphoneography"]
        if rng.random() < 0.6:
            tags.append(rng.choice(content_pool))
        if rng.random() < 0.5:
            tags.append(rng.choice([t for t, _ in NUMBER_TAGS]))
        lines.append(make_line(f"p{i:06d}", "bot_instaupload", rng.choice(FILLER_TITLES),
                               rng.choice(FILLER_DESCS), tags, rng))

    # 820 genuine uploads across 60 users.
    for i in range(180, 1000):
        user = f"u{rng.randrange(60):03d}"
        n_tags = rng.choices([1, 2, 3, 4], weights=[35, 35, 20, 10])[0]
        tags = []
        while len(tags) < n_tags:
            pool = content_pool if rng.random() < 0.8 else extra_pool
            t = rng.choice(pool)
            if t not in tags:
                tags.append(t)
        primary = tags[0]
        title = rng.choice(TITLES.get(primary, FILLER_TITLES))
        desc = rng.choice(DESCRIPTIONS.get(primary, FILLER_DESCS))
        lines.append(make_line(f"p{i:06d}", user, title, desc, tags, rng))

    OUT.write_text("".join(lines), encoding="utf-8")
    print(f"wrote {len(lines)} records to {OUT}")


def make_line(photo_id, user, title, desc, tags, rng):
    # Mixed encodings on purpose: spaces appear as %20 or '+', case varies.
    encoded = []
    for t in tags:
        if rng.random() < 0.3:
            t = t.title()
        if " " in t and rng.random() < 0.5:
            encoded.append(quote(t))
        else:
            encoded.append(t.replace(" ", "+"))
    return f"{photo_id}\t{user}\t{title}\t{desc}\t{','.join(encoded)}\n"


if __name__ == "__main__":
    main()
