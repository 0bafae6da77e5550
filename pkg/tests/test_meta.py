import itertools

import numpy as np
import pytest

from osnids.errors import LengthMismatch, SingleClassLabels, UntrainedModel, WrongArity
from osnids.learners import TrainingConfig, meta_feature_matrix, train_base_ensemble
from osnids.meta import (
    BENIGN,
    META_FAMILIES,
    UNKNOWN_ATTACK,
    MetaConfig,
    MetaEnsemble,
    classifier_outputs,
    predict,
    predict_batch,
    train_meta_classifiers,
    vote,
    write_verdict_csv,
)
from osnids.samples import LabeledSample


class _StubClassifier:
    """Forces a fixed bit, regardless of input."""

    def __init__(self, bit: int):
        self.bit = bit

    def predict_proba(self, X):
        return np.full(X.shape[0], 1.0 if self.bit else 0.0)


def _stub_ensemble(bits):
    return MetaEnsemble(classifiers=[_StubClassifier(b) for b in bits])


class TestVote:
    def test_exhaustive_sixteen_cases(self):
        for bits in itertools.product((0, 1), repeat=4):
            verdict = vote(bits)
            v = sum(bits) / 4
            assert verdict.v == v
            expected = UNKNOWN_ATTACK if v >= 0.5 else BENIGN
            assert verdict.decision == expected

    def test_tie_goes_to_attack(self):
        assert vote([1, 1, 0, 0]).decision == UNKNOWN_ATTACK
        assert vote([1, 1, 0, 0]).v == 0.5

    def test_all_benign(self):
        verdict = vote([0, 0, 0, 0])
        assert verdict.v == 0.0 and verdict.decision == BENIGN

    def test_all_attack(self):
        verdict = vote([1, 1, 1, 1])
        assert verdict.v == 1.0 and verdict.decision == UNKNOWN_ATTACK

    def test_wrong_arity(self):
        with pytest.raises(WrongArity):
            vote([1, 0, 1])
        with pytest.raises(WrongArity):
            vote([1, 0, 1, 0, 1])

    def test_non_bit_rejected(self):
        with pytest.raises(WrongArity):
            vote([2, 0, 0, 0])

    def test_permutation_symmetry(self):
        for bits in itertools.product((0, 1), repeat=4):
            base = vote(bits)
            for perm in itertools.permutations(bits):
                other = vote(perm)
                assert other.decision == base.decision and other.v == base.v

    def test_monotone_in_flips(self):
        for bits in itertools.product((0, 1), repeat=4):
            if vote(bits).decision == UNKNOWN_ATTACK:
                for i in range(4):
                    flipped = list(bits)
                    flipped[i] = 1
                    assert vote(flipped).decision == UNKNOWN_ATTACK


def _separable_meta_data(rng, n=400, dim=5):
    """Benign rows look one-hot-ish; attack rows look flat."""
    X = np.empty((n, dim))
    y = np.empty(n)
    for i in range(n):
        if rng.random() < 0.5:
            row = rng.uniform(0.0, 0.15, dim)
            row[rng.integers(dim)] = rng.uniform(0.85, 1.0)
            y[i] = 0.0
        else:
            row = rng.uniform(0.2, 0.45, dim)
            y[i] = 1.0
        X[i] = row
    return X, y


class TestTrainMetaClassifiers:
    def test_four_distinct_families(self):
        rng = np.random.default_rng(0)
        X, y = _separable_meta_data(rng)
        ensemble = train_meta_classifiers(X, y, seed=0)
        assert len(ensemble.classifiers) == 4
        assert ensemble.families == META_FAMILIES
        assert len(set(type(c).__name__ for c in ensemble.classifiers)) >= 3  # two boost variants share a class

    def test_holdout_accuracy_recorded_and_high(self):
        rng = np.random.default_rng(1)
        X, y = _separable_meta_data(rng)
        ensemble = train_meta_classifiers(X, y, seed=1)
        assert set(ensemble.holdout_accuracy) == set(META_FAMILIES)
        for family, acc in ensemble.holdout_accuracy.items():
            assert acc >= 0.95, f"{family} holdout accuracy {acc}"

    def test_single_class_labels(self):
        rng = np.random.default_rng(2)
        X = rng.random((30, 4))
        with pytest.raises(SingleClassLabels):
            train_meta_classifiers(X, np.zeros(30), seed=0)

    def test_length_mismatch(self):
        rng = np.random.default_rng(3)
        with pytest.raises(LengthMismatch):
            train_meta_classifiers(rng.random((10, 4)), np.zeros(9), seed=0)

    def test_deterministic(self):
        rng = np.random.default_rng(4)
        X, y = _separable_meta_data(rng, n=200)
        probe = np.random.default_rng(5).random((20, 5))
        a = classifier_outputs(train_meta_classifiers(X, y, seed=9), probe)
        b = classifier_outputs(train_meta_classifiers(X, y, seed=9), probe)
        assert np.array_equal(a, b)


def _mini_pipeline(rng):
    """Tiny trained base + meta pair over 2 benign byte templates."""
    templates = rng.integers(0, 256, (4, 1500))
    benign = []
    for c in range(2):
        for _ in range(30):
            vec = np.clip(np.rint(templates[c] + rng.normal(0, 5, 1500)), 0, 255).astype(np.uint8)
            vec[0] = max(int(vec[0]), 1)
            benign.append(LabeledSample(features=vec, label=0, cluster_id=c))
    base = train_base_ensemble(benign, 2, config=TrainingConfig(epochs=10, seed=0))

    attacks = []
    for c in (2, 3):
        for _ in range(20):
            vec = np.clip(np.rint(templates[c] + rng.normal(0, 5, 1500)), 0, 255).astype(np.uint8)
            vec[0] = max(int(vec[0]), 1)
            attacks.append(LabeledSample(features=vec, label=1))
    d2_all = [LabeledSample(features=s.features, label=0) for s in benign] + attacks
    mf = meta_feature_matrix(base, d2_all)
    labels = np.array([0.0 if s.label == 0 else 1.0 for s in d2_all])
    meta = train_meta_classifiers(mf, labels, config=MetaConfig(forest_trees=20, boost_rounds=20), seed=0)
    return base, meta, benign, attacks


class TestPredict:
    def test_sixteen_forced_outputs_match_voting_rule(self):
        rng = np.random.default_rng(6)
        vec = rng.integers(0, 256, 1500).astype(np.uint8)
        vec[0] = max(int(vec[0]), 1)
        sample = LabeledSample(features=vec, label=0)

        from osnids.learners import BaseEnsemble, BinaryScorer

        base = BaseEnsemble(
            scorers=[BinaryScorer(kind="logistic", params=np.zeros(1501)) for _ in range(2)],
            n_clusters=2,
        )
        for bits in itertools.product((0, 1), repeat=4):
            verdict = predict(base, _stub_ensemble(bits), sample)
            v = sum(bits) / 4
            assert verdict.v == v
            assert verdict.decision == (UNKNOWN_ATTACK if v >= 0.5 else BENIGN)
            assert verdict.outputs == bits

    def test_end_to_end_synthetic_detection(self):
        rng = np.random.default_rng(7)
        base, meta, benign, _ = _mini_pipeline(rng)
        # unseen attack template, far from the benign ones
        unknown_template = rng.integers(0, 256, 1500)
        hits = 0
        for _ in range(100):
            vec = np.clip(np.rint(unknown_template + rng.normal(0, 5, 1500)), 0, 255).astype(np.uint8)
            vec[0] = max(int(vec[0]), 1)
            verdict = predict(base, meta, LabeledSample(features=vec, label=0))
            hits += int(verdict.decision == UNKNOWN_ATTACK)
        assert hits >= 90

        benign_ok = 0
        for s in benign:
            plain = LabeledSample(features=s.features, label=0)
            benign_ok += int(predict(base, meta, plain).decision == BENIGN)
        assert benign_ok >= int(0.9 * len(benign))

    def test_untrained_model(self):
        rng = np.random.default_rng(8)
        vec = rng.integers(1, 256, 1500).astype(np.uint8)
        sample = LabeledSample(features=vec, label=0)
        ensemble = _stub_ensemble([0, 0, 0, 0])
        from osnids.learners import BaseEnsemble

        hollow = BaseEnsemble.__new__(BaseEnsemble)
        hollow.scorers = []
        hollow.n_clusters = 0
        with pytest.raises(UntrainedModel):
            predict(hollow, ensemble, sample)


class TestVerdictCsv:
    def test_audit_columns(self, tmp_path):
        rng = np.random.default_rng(9)
        base, meta, benign, attacks = _mini_pipeline(rng)
        samples = [LabeledSample(features=s.features, label=s.label) for s in benign[:5]] + attacks[:5]
        verdicts, mf = predict_batch(base, meta, samples)
        path = tmp_path / "verdicts.csv"
        write_verdict_csv(path, mf, verdicts)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "index,p_1,p_2,O_1,O_2,O_3,O_4,v,decision"
        assert len(lines) == 11
        first = lines[1].split(",")
        assert first[0] == "0"
        assert first[-1] in (BENIGN, UNKNOWN_ATTACK)
