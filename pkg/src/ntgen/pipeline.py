"""Stage functions and artifact files for the file-passing pipeline.

Stages and their outputs:

``extract``   capture -> feature table CSV (+ ``.meta.json`` sidecar)
``cluster``   feature table -> cluster model JSON
``train``     feature table + cluster model -> sequence model JSON
``generate``  capture + table + cluster model + sequence model -> pcap (+ provenance CSV)
``evaluate``  original pcap + generated pcap + cluster model -> report CSV + summary text

Every artifact records the hashes of what it was built from, and every stage
checks those hashes before using its inputs.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

from .clustering import ClusterModel, encode, kmeans_fit
from .config import PipelineConfig
from .errors import InputError, StageMismatchError
from .evaluation import (FidelityReport, feature_preservation, perplexity_records,
                         summary_stats)
from .features import FeatureTable, feature_table
from .flows import FlowAssembly, assemble_flows
from .generation import GeneratedTrace, GenerationPlan, generate
from .neural import NeuralLM, fit_neural_lm
from .packets import CaptureStats, RawPacket, load_capture, write_capture
from .sequences import (GLOBAL, IP_PAIR, MarkovModel, TransitionTimeHistogram, build_sequences,
                        fit_markov, fit_transition_times)


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    try:
        with open(path, "rb") as fh:
            for block in iter(lambda: fh.read(1 << 20), b""):
                h.update(block)
    except FileNotFoundError:
        raise InputError(f"input file not found: {path}") from None
    return h.hexdigest()


def text_digest(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True) + "\n"


def read_json(path: str | Path, what: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise InputError(f"missing {what}: {path}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{what} {path} is not valid JSON: {exc}") from None


# -- extract ----------------------------------------------------------------


@dataclass
class Extraction:
    packets: list[RawPacket]
    stats: CaptureStats
    assembly: FlowAssembly
    table: FeatureTable


def extract(capture: str | Path, config: PipelineConfig, flow_config=None) -> Extraction:
    packets, stats = load_capture(capture)
    assembly = assemble_flows(packets, flow_config or config.flows)
    table = feature_table(assembly.flows, packets, file_digest(capture))
    return Extraction(packets, stats, assembly, table)


# -- cluster ----------------------------------------------------------------


def cluster(table: FeatureTable, config: PipelineConfig) -> ClusterModel:
    return kmeans_fit(encode(table), K=config.k, seed=config.seed_for("clustering"),
                      max_iter=config.kmeans_max_iter, n_init=config.kmeans_n_init)


def cluster_artifact(model: ClusterModel, table: FeatureTable) -> dict:
    d = model.to_json()
    d["table_digest"] = text_digest(table.to_csv())
    d["source_digest"] = table.source_digest
    return d


def load_cluster_model(path: str | Path) -> tuple[ClusterModel, dict]:
    d = read_json(path, "cluster model")
    return ClusterModel.from_json(d), d


def check_table(table: FeatureTable, cluster_doc: dict) -> None:
    if table.catalog_hash != cluster_doc.get("catalog_hash"):
        raise StageMismatchError("feature table and cluster model use different catalogs",
                                 expected=cluster_doc.get("catalog_hash"), found=table.catalog_hash)
    if cluster_doc.get("table_digest") not in (None, text_digest(table.to_csv())):
        raise StageMismatchError("cluster model was fitted on a different feature table")


# -- train ------------------------------------------------------------------


@dataclass
class TrainedModel:
    kind: str
    aggregation: str
    model: MarkovModel | NeuralLM | None
    histogram: TransitionTimeHistogram
    labels: list[int]  # cluster id per table row
    catalog_hash: str
    cluster_digest: str

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "aggregation": self.aggregation,
            "model": self.model.to_json() if self.model is not None else None,
            "histogram": self.histogram.to_json(),
            "labels": self.labels,
            "catalog_hash": self.catalog_hash,
            "cluster_digest": self.cluster_digest,
        }

    @classmethod
    def from_json(cls, d: dict) -> TrainedModel:
        m = d.get("model")
        model = None
        if m is not None:
            model = MarkovModel.from_json(m) if m["kind"] == "MARKOV" else NeuralLM.from_json(m)
        return cls(d["kind"], d["aggregation"], model,
                   TransitionTimeHistogram.from_json(d["histogram"]), d["labels"],
                   d["catalog_hash"], d["cluster_digest"])


def train(table: FeatureTable, model: ClusterModel, config: PipelineConfig,
          cluster_digest: str = "") -> TrainedModel:
    labels = [int(c) for c in model.assign_table(table)]
    seqs = build_sequences(table.meta, labels, config.aggregation)
    hist = fit_transition_times(seqs, flow_count=len(labels))
    if config.model == "MARKOV":
        seq_model = fit_markov(seqs)
    elif config.model == "NEURAL":
        seq_model = fit_neural_lm(seqs, config.neural, seed=config.seed_for("model"))
    else:
        seq_model = None
    return TrainedModel(config.model, config.aggregation, seq_model, hist, labels,
                        table.catalog_hash, cluster_digest)


# -- generate ---------------------------------------------------------------


def make_generation_plan(packets: Sequence[RawPacket], table: FeatureTable, cluster_model: ClusterModel,
                         trained: TrainedModel, config: PipelineConfig,
                         seed: int | None = None) -> GenerationPlan:
    if trained.catalog_hash != table.catalog_hash:
        raise StageMismatchError("sequence model and feature table use different catalogs",
                                 expected=table.catalog_hash, found=trained.catalog_hash)
    if len(trained.labels) != len(table.meta):
        raise StageMismatchError(f"sequence model labels {len(trained.labels)} flows but the "
                                 f"table has {len(table.meta)}")
    bounds = config.generation
    t0 = min((p.ts_ns for p in packets), default=0)
    t1 = max((p.ts_ns for p in packets), default=0)
    return GenerationPlan(
        aggregation=trained.aggregation, model=trained.model, cluster_model=cluster_model,
        flows={m.flow_id: m for m in table.meta},
        labels={m.flow_id: c for m, c in zip(table.meta, trained.labels)},
        packets=packets, histogram=trained.histogram,
        t_start_ns=t0 if bounds.t_start_ns is None else bounds.t_start_ns,
        t_end_ns=t1 if bounds.t_end_ns is None else bounds.t_end_ns,
        seed=config.seed_for("generation") if seed is None else seed,
        max_sequence_len=bounds.max_sequence_len, flow_config=config.flows)


def run_generation(plan: GenerationPlan, config: PipelineConfig) -> GeneratedTrace:
    return generate(plan, pair_count=config.generation.pair_count,
                    flow_count=config.generation.flow_count)


def generated_flow_config(config: PipelineConfig):
    # generated flows are emitted one direction at a time, so no handshake is guaranteed
    return replace(config.flows, require_handshake=False)


# -- evaluate ---------------------------------------------------------------


def evaluate(original: Extraction, generated: Extraction, model: ClusterModel,
             config: PipelineConfig) -> FidelityReport:
    features = feature_preservation(original.table, generated.table, config.alpha,
                                    seed=config.seed_for("evaluation"))
    lo = model.assign_table(original.table)
    lg = model.assign_table(generated.table)
    seq_o = build_sequences(original.table.meta, lo, config.aggregation)
    seq_g = build_sequences(generated.table.meta, lg, config.aggregation)
    pair_o = build_sequences(original.table.meta, lo, IP_PAIR)
    pair_g = build_sequences(generated.table.meta, lg, IP_PAIR)
    report = FidelityReport(features, config.alpha)
    report.perplexities = perplexity_records(seq_o, seq_g, pair_o, pair_g)
    report.summary = summary_stats(len(original.packets), len(generated.packets), lo, lg,
                                   pair_o, pair_g)
    return report


def write_generated(trace: GeneratedTrace, out: str | Path) -> Path:
    out = Path(out)
    write_capture(out, trace.packets)
    prov = Path(str(out) + ".provenance.csv")
    prov.write_text(trace.provenance_csv())
    return prov


__all__ = [
    "Extraction", "TrainedModel", "extract", "cluster", "cluster_artifact", "load_cluster_model",
    "check_table", "train", "make_generation_plan", "run_generation", "generated_flow_config",
    "evaluate", "write_generated", "file_digest", "text_digest", "dump_json", "read_json",
    "GLOBAL", "IP_PAIR",
]
