"""Stage orchestration: each stage reads its inputs from the work
directory, writes its artifact there, and is independently re-runnable.
Identical configs and seeds reproduce identical artifacts byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import logging
from pathlib import Path

import numpy as np

from . import capture, clustering, evaluation, learners, meta, persistence, splits
from .config import require
from .errors import ConfigError, UntrainedModel
from .samples import BENIGN_CLASS_ID, SampleSet, unit_matrix

log = logging.getLogger("osnids")

SAMPLES = "samples.sset"
HELDOUT = "heldout.json"
INGEST_REPORT = "ingest_report.json"
D1, D2, D3 = "d1.sset", "d2.sset", "d3.sset"
D1_CLUSTERED = "d1_clustered.sset"
SPLIT_MANIFEST = "split_manifest.csv"
CLUSTER_CSV, CLUSTER_JSON = "clustering.csv", "clustering.json"
BUNDLE_DIR = "bundle"
TRAINING_CURVES = "training_curves.csv"
EVAL_REPORT = "eval_report.json"
EVAL_REPORT_CSV = "eval_report.csv"
BASELINE_REPORT = "baseline_report.json"
VERDICTS = "verdicts.csv"


def workdir_of(cfg: dict) -> Path:
    wd = Path(require(cfg, "workdir"))
    wd.mkdir(parents=True, exist_ok=True)
    return wd


def _seed(cfg: dict) -> int:
    return int(require(cfg, "seed"))


def _config_digest(cfg: dict) -> str:
    """Digest of everything that shapes the trained models."""
    relevant = {
        "seed": require(cfg, "seed"),
        "learners": require(cfg, "learners"),
        "meta": require(cfg, "meta"),
        "cluster": require(cfg, "cluster"),
    }
    blob = json.dumps(relevant, sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def stage_synth(cfg: dict) -> Path:
    wd = workdir_of(cfg)
    config = evaluation.SyntheticConfig(
        n_benign_clusters=int(require(cfg, "synth.n_benign_clusters")),
        n_known_attack_classes=int(require(cfg, "synth.n_known_attack_classes")),
        n_unknown_attack_classes=int(require(cfg, "synth.n_unknown_attack_classes")),
        samples_per_class=int(require(cfg, "synth.samples_per_class")),
        noise_sigma=float(require(cfg, "synth.noise_sigma")),
        min_hamming_separation=int(require(cfg, "synth.min_hamming_separation")),
        seed=_seed(cfg),
    )
    corpus = evaluation.generate_synthetic(config)
    persistence.save_sample_set(corpus.sample_set, wd / SAMPLES)
    with open(wd / HELDOUT, "w") as fh:
        json.dump({"heldout_classes": corpus.heldout_classes}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    log.info("synth: %d samples, %d classes", len(corpus.sample_set), len(corpus.sample_set.class_names))
    return wd / SAMPLES


def stage_ingest(cfg: dict) -> Path:
    wd = workdir_of(cfg)
    pcap_path = require(cfg, "ingest.pcap")
    flows_path = require(cfg, "ingest.flows")
    column_map = require(cfg, "ingest.column_map")
    benign_label = require(cfg, "ingest.benign_label")
    ratio = float(require(cfg, "ingest.undersample_ratio"))

    parsed = capture.parse_capture(pcap_path)
    flows = capture.read_flow_csv(flows_path, column_map)
    labeled, unmatched = capture.label_packets(parsed.packets, flows, benign_label=benign_label)
    deduped = capture.deduplicate(labeled.samples)
    final = capture.undersample_benign(deduped, ratio, _seed(cfg))
    out = SampleSet(class_names=labeled.class_names, samples=final)
    persistence.save_sample_set(out, wd / SAMPLES)
    report = {
        "packets": len(parsed.packets),
        "skipped": parsed.skipped,
        "matched": unmatched.matched,
        "no_match": unmatched.no_match,
        "empty_payload": unmatched.empty_payload,
        "after_dedup": len(deduped),
        "after_undersample": len(final),
    }
    with open(wd / INGEST_REPORT, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    log.info("ingest: %d packets -> %d samples", len(parsed.packets), len(final))
    return wd / SAMPLES


def _heldout_classes(cfg: dict, wd: Path) -> list[str]:
    source = require(cfg, "pipeline.source")
    if source == "synth":
        heldout_file = wd / HELDOUT
        if not heldout_file.exists():
            raise ConfigError(f"{heldout_file} not found; run the synth stage first")
        with open(heldout_file) as fh:
            return json.load(fh)["heldout_classes"]
    return list(require(cfg, "split.heldout_classes"))


def stage_split(cfg: dict) -> splits.SplitResult:
    wd = workdir_of(cfg)
    sample_set = persistence.load_sample_set(wd / SAMPLES)
    spec = splits.SplitSpec(
        heldout_classes=frozenset(_heldout_classes(cfg, wd)),
        benign_ratios=tuple(require(cfg, "split.benign_ratios")),
        seed=_seed(cfg),
    )
    result = splits.build_splits(sample_set, spec)
    for name, part in ((D1, result.d1), (D2, result.d2), (D3, result.d3)):
        persistence.save_sample_set(SampleSet(class_names=result.class_names, samples=part), wd / name)
    splits.write_manifest_csv(result.manifest, wd / SPLIT_MANIFEST)
    log.info("split: d1=%d d2=%d d3=%d", len(result.d1), len(result.d2), len(result.d3))
    return result


def stage_cluster(cfg: dict) -> clustering.ClusteringReport:
    wd = workdir_of(cfg)
    d1 = persistence.load_sample_set(wd / D1)
    params = clustering.EmbeddingParams(
        perplexity=float(require(cfg, "cluster.perplexity")),
        iterations=int(require(cfg, "cluster.iterations")),
        early_exaggeration=float(require(cfg, "cluster.early_exaggeration")),
        learning_rate=float(require(cfg, "cluster.learning_rate")),
        seed=_seed(cfg),
    )
    embedding = clustering.tsne_embed(unit_matrix(d1.samples), params)
    report = clustering.select_cluster_count(
        embedding,
        k_min=int(require(cfg, "cluster.k_min")),
        k_max=int(require(cfg, "cluster.k_max")),
        restarts=int(require(cfg, "cluster.restarts")),
        seed=_seed(cfg),
    )
    annotated = clustering.annotate_clusters(d1.samples, report.assignments)
    persistence.save_sample_set(SampleSet(class_names=d1.class_names, samples=annotated), wd / D1_CLUSTERED)
    clustering.report_to_csv(report, wd / CLUSTER_CSV)
    clustering.report_to_json(report, wd / CLUSTER_JSON)
    log.info("cluster: selected N=%d", report.selected_n)
    return report


def stage_train_base(cfg: dict) -> learners.BaseEnsemble:
    wd = workdir_of(cfg)
    d1 = persistence.load_sample_set(wd / D1_CLUSTERED)
    with open(wd / CLUSTER_JSON) as fh:
        n = int(json.load(fh)["selected_n"])
    kind = require(cfg, "learners.kind")
    config = learners.TrainingConfig(
        epochs=int(require(cfg, "learners.epochs")),
        batch_size=int(require(cfg, "learners.batch_size")),
        learning_rate=float(require(cfg, "learners.learning_rate")),
        l2=float(require(cfg, "learners.l2")),
        seed=_seed(cfg),
    )
    threads = int(cfg.get("threads", 1))
    ensemble = learners.train_base_ensemble(d1.samples, n, config=config, kind=kind, threads=threads)
    persistence.save_bundle(ensemble, None, wd / BUNDLE_DIR, config_digest=_config_digest(cfg))
    learners.write_training_curves_csv(ensemble, wd / TRAINING_CURVES)
    log.info("train-base: %d scorers (%s)", n, kind)
    return ensemble


def stage_train_meta(cfg: dict) -> meta.MetaEnsemble:
    wd = workdir_of(cfg)
    base, _ = persistence.load_bundle(wd / BUNDLE_DIR)
    d2 = persistence.load_sample_set(wd / D2)
    features = learners.meta_feature_matrix(base, d2.samples)
    labels = np.array([0.0 if s.label == BENIGN_CLASS_ID else 1.0 for s in d2.samples])
    config = meta.MetaConfig(
        forest_trees=int(require(cfg, "meta.forest_trees")),
        forest_depth=int(require(cfg, "meta.forest_depth")),
        boost_rounds=int(require(cfg, "meta.boost_rounds")),
        boost_learning_rate=float(require(cfg, "meta.boost_learning_rate")),
        boost_depth=int(require(cfg, "meta.boost_depth")),
        boost_leaves=int(require(cfg, "meta.boost_leaves")),
        holdout_fraction=float(require(cfg, "meta.holdout_fraction")),
    )
    ensemble = meta.train_meta_classifiers(features, labels, config=config, seed=_seed(cfg))
    persistence.save_bundle(base, ensemble, wd / BUNDLE_DIR, config_digest=_config_digest(cfg))
    log.info("train-meta: holdout accuracy %s", ensemble.holdout_accuracy)
    return ensemble


def stage_evaluate(cfg: dict) -> evaluation.EvalReport:
    wd = workdir_of(cfg)
    base, meta_ens = persistence.load_bundle(wd / BUNDLE_DIR)
    if meta_ens is None:
        raise UntrainedModel("bundle has no meta-classifiers; run train-meta first")
    d3 = persistence.load_sample_set(wd / D3)
    report, verdicts, mf = evaluation.evaluate(base, meta_ens, d3.samples, d3.class_names)
    report.write_json(wd / EVAL_REPORT)
    report.write_csv(wd / EVAL_REPORT_CSV)
    meta.write_verdict_csv(wd / VERDICTS, mf, verdicts)
    if bool(require(cfg, "eval.run_baseline")):
        d1_path = wd / D1_CLUSTERED if (wd / D1_CLUSTERED).exists() else wd / D1
        d1 = persistence.load_sample_set(d1_path)
        baseline = evaluation.naive_baseline(
            d1.samples, d3.samples, d3.class_names,
            threshold_quantile=float(require(cfg, "eval.baseline_quantile")),
        )
        baseline.write_json(wd / BASELINE_REPORT)
    log.info(
        "evaluate: sensitivity=%s specificity=%s",
        report.sensitivity,
        report.specificity,
    )
    return report


def run_pipeline(cfg: dict) -> evaluation.EvalReport:
    """Acquire the corpus, then split, cluster, train base, train meta,
    and evaluate, persisting each stage's artifact along the way."""
    source = require(cfg, "pipeline.source")
    if source == "synth":
        stage_synth(cfg)
    elif source == "ingest":
        stage_ingest(cfg)
    elif source == "existing":
        wd = workdir_of(cfg)
        if not (wd / SAMPLES).exists():
            raise ConfigError(f"pipeline.source=existing but {wd / SAMPLES} not found")
    else:
        raise ConfigError(f"pipeline.source must be synth, ingest or existing, got {source!r}")
    stage_split(cfg)
    stage_cluster(cfg)
    stage_train_base(cfg)
    stage_train_meta(cfg)
    return stage_evaluate(cfg)
