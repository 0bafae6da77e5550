"""Partition the labeled corpus into D1 (benign), D2 (benign + known
attacks) and D3 (benign + held-out attacks)."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    EmptyBenign,
    InvalidRange,
    NoKnownAttacks,
    UnknownHeldoutClass,
)
from .samples import BENIGN_CLASS_ID, LabeledSample, SampleSet


@dataclass(frozen=True)
class SplitSpec:
    heldout_classes: frozenset[str]
    benign_ratios: tuple[float, float, float] = (0.50, 0.30, 0.20)
    seed: int = 0

    def __post_init__(self):
        if len(self.benign_ratios) != 3 or any(r <= 0 for r in self.benign_ratios):
            raise InvalidRange(f"benign ratios must be three positive values, got {self.benign_ratios}")
        if abs(sum(self.benign_ratios) - 1.0) > 1e-9:
            raise InvalidRange(f"benign ratios must sum to 1, got {sum(self.benign_ratios)}")
        if not self.heldout_classes:
            raise InvalidRange("held-out class set must be non-empty")
        object.__setattr__(self, "heldout_classes", frozenset(self.heldout_classes))


@dataclass
class SplitResult:
    d1: list[LabeledSample]
    d2: list[LabeledSample]
    d3: list[LabeledSample]
    class_names: list[str]
    manifest: list[tuple[str, str, int]] = field(default_factory=list)  # (split, class, count)


def build_splits(sample_set: SampleSet, spec: SplitSpec) -> SplitResult:
    """Cut benign samples at the configured ratio boundaries (seeded
    shuffle, floor cut points, remainder to D3); send known attacks to D2
    and held-out classes to D3."""
    names = sample_set.class_names
    unknown_names = [c for c in spec.heldout_classes if c not in names]
    if unknown_names:
        raise UnknownHeldoutClass(f"held-out classes absent from data: {', '.join(sorted(unknown_names))}")
    if names[BENIGN_CLASS_ID] in spec.heldout_classes:
        raise InvalidRange("the benign class cannot be held out")
    heldout_ids = {names.index(c) for c in spec.heldout_classes}

    benign = [s for s in sample_set.samples if s.label == BENIGN_CLASS_ID]
    known = [s for s in sample_set.samples if s.label != BENIGN_CLASS_ID and s.label not in heldout_ids]
    heldout = [s for s in sample_set.samples if s.label in heldout_ids]
    if not benign:
        raise EmptyBenign("no benign samples to split")
    if not known:
        raise NoKnownAttacks("no non-held-out attack samples for the meta-learner split")

    rng = np.random.default_rng(spec.seed)
    order = rng.permutation(len(benign))
    n = len(benign)
    # epsilon keeps e.g. (0.5 + 0.3) * n from flooring to 0.8n - 1
    cut1 = int(spec.benign_ratios[0] * n + 1e-9)
    cut2 = int((spec.benign_ratios[0] + spec.benign_ratios[1]) * n + 1e-9)
    b1 = [benign[i] for i in order[:cut1]]
    b2 = [benign[i] for i in order[cut1:cut2]]
    b3 = [benign[i] for i in order[cut2:]]

    result = SplitResult(d1=b1, d2=b2 + known, d3=b3 + heldout, class_names=list(names))
    result.manifest = split_manifest(result)
    return result


def split_manifest(result: SplitResult) -> list[tuple[str, str, int]]:
    """Sparse (split, class, count) table; classes absent from a split get no row."""
    rows: list[tuple[str, str, int]] = []
    for split_name, split in (("d1", result.d1), ("d2", result.d2), ("d3", result.d3)):
        counts: dict[int, int] = {}
        for s in split:
            counts[s.label] = counts.get(s.label, 0) + 1
        for label in sorted(counts):
            rows.append((split_name, result.class_names[label], counts[label]))
    return rows


def write_manifest_csv(rows: list[tuple[str, str, int]], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["split", "class", "count"])
        writer.writerows(rows)
