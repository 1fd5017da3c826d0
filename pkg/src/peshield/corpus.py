"""Sample manifests: JSON-lines corpus bookkeeping, time splits, imbalance."""

from __future__ import annotations

import json
import random
from dataclasses import asdict, dataclass
from pathlib import Path

from .errors import FormatError, MissingYear

LABEL_GOODWARE = 0
LABEL_MALWARE = 1

CLASS_GOODWARE = 0
CLASS_UNMODIFIED = 1
CLASS_ADVERSARIAL = 2

SPLITS = ("train", "test1", "test2")

# Registry of variant generators; 0 is reserved for unperturbed samples.
GENERATOR_IDS = {"none": 0, "random": 1, "genetic": 2}
GENERATOR_NAMES = {v: k for k, v in GENERATOR_IDS.items()}


@dataclass
class ManifestEntry:
    sample_id: str
    path: str
    label: int
    class_tag: int
    generator_id: int
    first_seen_year: int
    split: str

    def validate(self) -> None:
        if self.split not in SPLITS:
            raise FormatError(f"{self.sample_id}: split {self.split!r} not in {SPLITS}")
        if self.split == "test2" and self.first_seen_year < 2022:
            raise FormatError(
                f"{self.sample_id}: test2 entries must have first_seen_year >= 2022"
            )
        if self.label not in (LABEL_GOODWARE, LABEL_MALWARE):
            raise FormatError(f"{self.sample_id}: label must be 0 or 1")
        if self.class_tag not in (CLASS_GOODWARE, CLASS_UNMODIFIED, CLASS_ADVERSARIAL):
            raise FormatError(f"{self.sample_id}: class_tag must be 0, 1, or 2")


def write_manifest(path: str | Path, entries: list[ManifestEntry]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for entry in entries:
            entry.validate()
            fh.write(json.dumps(asdict(entry), sort_keys=True) + "\n")


def read_manifest(path: str | Path) -> list[ManifestEntry]:
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                entry = ManifestEntry(**record)
            except (json.JSONDecodeError, TypeError) as exc:
                raise FormatError(f"{path}:{lineno}: bad manifest record: {exc}") from exc
            entry.validate()
            entries.append(entry)
    return entries


def split_by_time(
    entries: list[ManifestEntry], boundary_year: int = 2022
) -> tuple[list[ManifestEntry], list[ManifestEntry]]:
    """Partition entries into (before boundary, at-or-after boundary)."""
    early, late = [], []
    for entry in entries:
        if entry.first_seen_year is None:
            raise MissingYear(f"{entry.sample_id} has no first_seen_year")
        (early if entry.first_seen_year < boundary_year else late).append(entry)
    return early, late


def subsample_imbalanced(
    entries: list[ManifestEntry], ratio_good_to_mal: int = 10, seed: int = 0
) -> list[ManifestEntry]:
    """Keep all goodware; uniformly subsample malware to |goodware| / ratio.

    If there is less malware than the quota, everything is kept. Deterministic
    under the seed; output preserves the input ordering.
    """
    goodware = [e for e in entries if e.label == LABEL_GOODWARE]
    malware = [e for e in entries if e.label == LABEL_MALWARE]
    quota = len(goodware) // ratio_good_to_mal if ratio_good_to_mal > 0 else len(malware)
    if len(malware) > quota:
        rng = random.Random(seed)
        keep = set(rng.sample(range(len(malware)), quota))
        kept_ids = {malware[i].sample_id for i in keep}
    else:
        kept_ids = {e.sample_id for e in malware}
    return [e for e in entries if e.label == LABEL_GOODWARE or e.sample_id in kept_ids]
