"""Scoring on D3, the desk-scale synthetic corpus, and a naive baseline.

Unknown attack is the positive class throughout: sensitivity is the
detection rate of unknown attacks, specificity the detection rate of
benign traffic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import EmptyDataset, InvalidRange, SeparationUnsatisfiable
from .learners import BaseEnsemble
from .meta import MetaEnsemble, UNKNOWN_ATTACK, Verdict, predict_batch
from .samples import (
    BENIGN_CLASS_ID,
    BENIGN_CLASS_NAME,
    FEATURE_LEN,
    LabeledSample,
    SampleSet,
    byte_matrix,
)


@dataclass
class EvalReport:
    tp: int
    tn: int
    fp: int
    fn: int
    per_class: dict[str, Optional[float]] = field(default_factory=dict)

    @property
    def sensitivity(self) -> Optional[float]:
        pos = self.tp + self.fn
        return self.tp / pos if pos else None

    @property
    def specificity(self) -> Optional[float]:
        neg = self.tn + self.fp
        return self.tn / neg if neg else None

    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def to_dict(self) -> dict:
        return {
            "tp": self.tp,
            "tn": self.tn,
            "fp": self.fp,
            "fn": self.fn,
            "sensitivity": self.sensitivity,
            "specificity": self.specificity,
            "per_class": dict(sorted(self.per_class.items())),
        }

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_csv(self, path) -> None:
        import csv

        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["metric", "value"])
            for key in ("tp", "tn", "fp", "fn"):
                writer.writerow([key, getattr(self, key)])
            for key, value in (("sensitivity", self.sensitivity), ("specificity", self.specificity)):
                writer.writerow([key, "" if value is None else repr(value)])
            for name, rate in sorted(self.per_class.items()):
                writer.writerow([f"detection_rate[{name}]", "" if rate is None else repr(rate)])


def _report_from_predictions(
    samples: Sequence[LabeledSample],
    is_attack_pred: Sequence[bool],
    class_names: Sequence[str],
) -> EvalReport:
    tp = tn = fp = fn = 0
    per_class_hits: dict[str, list[int]] = {}
    for sample, predicted_attack in zip(samples, is_attack_pred):
        actual_attack = sample.label != BENIGN_CLASS_ID
        if actual_attack:
            if predicted_attack:
                tp += 1
            else:
                fn += 1
            per_class_hits.setdefault(class_names[sample.label], []).append(int(predicted_attack))
        else:
            if predicted_attack:
                fp += 1
            else:
                tn += 1
            per_class_hits.setdefault(class_names[sample.label], []).append(int(not predicted_attack))
    per_class = {name: (sum(hits) / len(hits) if hits else None) for name, hits in per_class_hits.items()}
    return EvalReport(tp=tp, tn=tn, fp=fp, fn=fn, per_class=per_class)


def evaluate(
    base: BaseEnsemble,
    meta: MetaEnsemble,
    d3: Sequence[LabeledSample],
    class_names: Sequence[str],
) -> tuple[EvalReport, list[Verdict], np.ndarray]:
    """Confusion counts plus per-true-class detection rates over D3."""
    if not d3:
        raise EmptyDataset("evaluation dataset is empty")
    verdicts, mf = predict_batch(base, meta, d3)
    preds = [v.decision == UNKNOWN_ATTACK for v in verdicts]
    return _report_from_predictions(d3, preds, class_names), verdicts, mf


# --- synthetic corpus ---


@dataclass(frozen=True)
class SyntheticConfig:
    n_benign_clusters: int = 7
    n_known_attack_classes: int = 9
    n_unknown_attack_classes: int = 5
    samples_per_class: int = 200
    noise_sigma: float = 8.0
    min_hamming_separation: int = 1200
    seed: int = 0

    def __post_init__(self):
        counts = (
            self.n_benign_clusters,
            self.n_known_attack_classes,
            self.n_unknown_attack_classes,
            self.samples_per_class,
        )
        if any(c < 1 for c in counts):
            raise InvalidRange("all synthetic counts must be >= 1")
        if not (0 <= self.min_hamming_separation <= FEATURE_LEN):
            raise InvalidRange(
                f"hamming separation must lie in [0, {FEATURE_LEN}], got {self.min_hamming_separation}"
            )
        if self.noise_sigma < 0:
            raise InvalidRange("noise sigma must be >= 0")


@dataclass
class SyntheticCorpus:
    sample_set: SampleSet
    heldout_classes: list[str]
    benign_templates: np.ndarray  # (n_benign_clusters, 1500) uint8
    known_templates: np.ndarray
    unknown_templates: np.ndarray


def _draw_templates(rng: np.random.Generator, count: int, existing: list[np.ndarray], min_sep: int):
    out = []
    for _ in range(count):
        for _attempt in range(1000):
            tpl = rng.integers(0, 256, size=FEATURE_LEN, dtype=np.uint8)
            if not tpl.any():
                continue
            if all(int(np.count_nonzero(tpl != other)) >= min_sep for other in existing):
                existing.append(tpl)
                out.append(tpl)
                break
        else:
            raise SeparationUnsatisfiable(
                f"could not draw {count} templates with pairwise Hamming >= {min_sep}"
            )
    return out


def _noisy_samples(rng, template, count, sigma, label, cluster_id=None):
    base = template.astype(np.float64)
    samples = []
    for _ in range(count):
        while True:
            noisy = np.clip(np.rint(base + rng.normal(0.0, sigma, size=FEATURE_LEN)), 0, 255)
            vec = noisy.astype(np.uint8)
            if vec.any():
                break
        samples.append(LabeledSample(features=vec, label=label, cluster_id=cluster_id))
    return samples


def generate_synthetic(config: SyntheticConfig) -> SyntheticCorpus:
    """Deterministic template-plus-noise corpus.

    Every class (and every benign sub-cluster) gets its own random byte
    template; all templates are pairwise separated by at least the
    configured Hamming distance, so classes are distinguishable by
    construction.
    """
    rng = np.random.default_rng(config.seed)
    all_templates: list[np.ndarray] = []
    benign = _draw_templates(rng, config.n_benign_clusters, all_templates, config.min_hamming_separation)
    known = _draw_templates(rng, config.n_known_attack_classes, all_templates, config.min_hamming_separation)
    unknown = _draw_templates(rng, config.n_unknown_attack_classes, all_templates, config.min_hamming_separation)

    known_names = [f"known_attack_{i}" for i in range(config.n_known_attack_classes)]
    unknown_names = [f"unknown_attack_{i}" for i in range(config.n_unknown_attack_classes)]
    class_names = [BENIGN_CLASS_NAME] + known_names + unknown_names

    samples: list[LabeledSample] = []
    for tpl in benign:
        samples.extend(
            _noisy_samples(rng, tpl, config.samples_per_class, config.noise_sigma, BENIGN_CLASS_ID)
        )
    for i, tpl in enumerate(known):
        samples.extend(_noisy_samples(rng, tpl, config.samples_per_class, config.noise_sigma, 1 + i))
    offset = 1 + config.n_known_attack_classes
    for i, tpl in enumerate(unknown):
        samples.extend(
            _noisy_samples(rng, tpl, config.samples_per_class, config.noise_sigma, offset + i)
        )

    return SyntheticCorpus(
        sample_set=SampleSet(class_names=class_names, samples=samples),
        heldout_classes=unknown_names,
        benign_templates=np.stack(benign),
        known_templates=np.stack(known),
        unknown_templates=np.stack(unknown),
    )


# --- naive centroid-distance baseline ---


def naive_baseline(
    d1: Sequence[LabeledSample],
    d3: Sequence[LabeledSample],
    class_names: Sequence[str],
    threshold_quantile: float = 0.99,
) -> EvalReport:
    """Distance-to-nearest-benign-centroid detector in raw byte space.

    Centroids come from D1's cluster ids when present (one global centroid
    otherwise); the threshold is the given quantile of D1's own
    nearest-centroid distances.
    """
    if not d1 or not d3:
        raise EmptyDataset("baseline needs non-empty d1 and d3")
    if not (0.0 <= threshold_quantile <= 1.0):
        raise InvalidRange(f"quantile must lie in [0, 1], got {threshold_quantile}")

    X1 = byte_matrix(d1).astype(np.float64)
    cluster_ids = [s.cluster_id for s in d1]
    if all(c is not None for c in cluster_ids):
        ids = sorted(set(cluster_ids))
        centroids = np.stack([X1[[c == i for c in cluster_ids]].mean(axis=0) for i in ids])
    else:
        centroids = X1.mean(axis=0, keepdims=True)

    c_sq = (centroids * centroids).sum(axis=1)

    def nearest(X: np.ndarray) -> np.ndarray:
        d2 = (X * X).sum(axis=1)[:, None] + c_sq[None, :] - 2.0 * (X @ centroids.T)
        return np.sqrt(np.maximum(d2.min(axis=1), 0.0))

    threshold = float(np.quantile(nearest(X1), threshold_quantile))
    dists = nearest(byte_matrix(d3).astype(np.float64))
    preds = [bool(d > threshold) for d in dists]
    return _report_from_predictions(d3, preds, class_names)
