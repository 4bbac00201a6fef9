"""Semantic entropy over sampled answers.

The estimator follows the standard recipe: draw several answers at high
temperature, group them into meaning-equivalence clusters via bidirectional
entailment, attach to each cluster the total normalized probability of its
members, and report the negative mean cluster log-probability

    SE = -(1/|C|) * sum_i log p(C_i)

in natural-log units (nats). Predictive entropy, the lexical baseline, is the
negative mean log-probability of the raw samples over the same normalized
probabilities. All-singleton clusterings make the two coincide exactly.

Clustering is greedy and order-deterministic: samples are processed by index;
each is compared against the representative (first member) of every existing
cluster in creation order and joins the first equivalent one, else opens a
new cluster. When the equivalence relation is transitive this reproduces the
connected components of the pairwise relation exactly. A sample whose text
normalizes to the empty string is content-free: it always forms its own
cluster and is never merged, so no vacuous entailment call is made for it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

from .errors import EmptySampleSet, LengthMismatch, MissingClusterProbs
from .generator import AnswerSample
from .text import normalize_text

# Tolerance for attached cluster probabilities summing to one.
CLUSTER_PROB_TOLERANCE = 1e-9


@dataclass
class SemanticCluster:
    """One meaning-equivalence class of sample indices.

    Attributes:
        member_indices: Strictly increasing sample indices.
        representative_index: First member; the one compared against when
            later samples probe this cluster.
        log_prob: ln of the cluster's total normalized probability, attached
            by :func:`attach_cluster_probs`; None until then.
    """

    member_indices: list[int]
    representative_index: int
    log_prob: float | None = None

    def __post_init__(self) -> None:
        if not self.member_indices:
            raise ValueError("cluster needs at least one member")
        if any(b <= a for a, b in zip(self.member_indices, self.member_indices[1:])):
            raise ValueError("member indices must be strictly increasing")
        if self.representative_index != self.member_indices[0]:
            raise ValueError("representative must be the first member")


@dataclass
class Clustering:
    """A partition of sample indices 0..num_samples-1, in creation order."""

    clusters: list[SemanticCluster]
    num_samples: int

    def __post_init__(self) -> None:
        seen = sorted(i for c in self.clusters for i in c.member_indices)
        if seen != list(range(self.num_samples)):
            raise ValueError(
                f"clusters do not partition 0..{self.num_samples - 1}: {seen}"
            )

    def labels(self) -> list[int]:
        """Cluster index per sample, handy for comparisons in tests."""
        out = [0] * self.num_samples
        for idx, cluster in enumerate(self.clusters):
            for member in cluster.member_indices:
                out[member] = idx
        return out

    def to_dict(self) -> dict:
        return {
            "num_samples": self.num_samples,
            "clusters": [
                {
                    "member_indices": list(c.member_indices),
                    "representative_index": c.representative_index,
                    "log_prob": c.log_prob,
                }
                for c in self.clusters
            ],
        }


@dataclass
class EntropyReport:
    """Everything the router needs to know about one sampling round."""

    semantic_entropy: float
    predictive_entropy: float
    clustering: Clustering
    normalized_sample_probs: list[float]
    length_normalized: bool

    def to_dict(self) -> dict:
        return {
            "semantic_entropy": self.semantic_entropy,
            "predictive_entropy": self.predictive_entropy,
            "clustering": self.clustering.to_dict(),
            "normalized_sample_probs": list(self.normalized_sample_probs),
            "length_normalized": self.length_normalized,
        }


def normalize_sample_probs(
    samples: Sequence[AnswerSample], length_normalized: bool = False
) -> list[float]:
    """Softmax the sample log-likelihoods into probabilities summing to 1.

    Args:
        samples: Scored answer samples.
        length_normalized: Score each sample by total_logprob / token_count
            instead of the raw total. Off by default; flip it only when
            comparing pools with very different answer lengths.

    Returns:
        One probability per sample, in order, summing to 1 within 1e-12.

    Raises:
        EmptySampleSet: On zero samples.
    """
    if not samples:
        raise EmptySampleSet("cannot normalize an empty sample set")
    if length_normalized:
        scores = [s.total_logprob / s.token_count for s in samples]
    else:
        scores = [s.total_logprob for s in samples]
    peak = max(scores)  # max-shift: exp never overflows
    weights = [math.exp(s - peak) for s in scores]
    total = math.fsum(weights)
    return [w / total for w in weights]


def cluster_samples(
    question_text: str,
    samples: Sequence[AnswerSample],
    equivalence: Callable[[str, str, str], bool],
) -> Clustering:
    """Greedily cluster samples by bidirectional entailment.

    Args:
        question_text: The question the answers respond to; forwarded to the
            equivalence predicate.
        samples: Answer samples, index order preserved.
        equivalence: Predicate (question, answer_a, answer_b) -> bool, true
            when the answers mutually entail each other.

    Returns:
        A Clustering without probabilities attached.

    Raises:
        EmptySampleSet: On zero samples.
    """
    if not samples:
        raise EmptySampleSet("cannot cluster an empty sample set")
    clusters: list[SemanticCluster] = []
    # Content-free clusters (empty normalized text) never accept members.
    accepts_members: list[bool] = []
    for index, sample in enumerate(samples):
        if not normalize_text(sample.text):
            clusters.append(
                SemanticCluster(member_indices=[index], representative_index=index)
            )
            accepts_members.append(False)
            continue
        joined = False
        for cluster, open_for_members in zip(clusters, accepts_members):
            if not open_for_members:
                continue
            representative = samples[cluster.representative_index].text
            if equivalence(question_text, sample.text, representative):
                cluster.member_indices.append(index)
                joined = True
                break
        if not joined:
            clusters.append(
                SemanticCluster(member_indices=[index], representative_index=index)
            )
            accepts_members.append(True)
    return Clustering(clusters=clusters, num_samples=len(samples))


def attach_cluster_probs(clustering: Clustering, probs: Sequence[float]) -> Clustering:
    """Attach ln(total member probability) to every cluster, in place.

    Args:
        clustering: Partition produced by :func:`cluster_samples`.
        probs: Normalized sample probabilities, one per sample.

    Returns:
        The same clustering, for chaining.

    Raises:
        LengthMismatch: When len(probs) != clustering.num_samples.
    """
    if len(probs) != clustering.num_samples:
        raise LengthMismatch(
            f"{len(probs)} probabilities for {clustering.num_samples} samples"
        )
    for cluster in clustering.clusters:
        mass = math.fsum(probs[i] for i in cluster.member_indices)
        if len(cluster.member_indices) == clustering.num_samples:
            # The whole sample set: its mass is 1 by construction, so pin the
            # log to exactly zero instead of ln(1 +/- float dust).
            cluster.log_prob = 0.0
        else:
            cluster.log_prob = min(0.0, math.log(mass))
    total = math.fsum(math.exp(c.log_prob) for c in clustering.clusters)
    if abs(total - 1.0) > CLUSTER_PROB_TOLERANCE:
        raise LengthMismatch(
            f"cluster probabilities sum to {total}, expected 1; "
            "were the probs normalized over these samples?"
        )
    return clustering


def semantic_entropy(clustering: Clustering) -> float:
    """Negative mean cluster log-probability, in nats.

    Zero iff every sample landed in one cluster; bounded below by
    ln(num_clusters) with equality at uniform cluster mass.

    Raises:
        MissingClusterProbs: When probabilities were never attached.
    """
    log_probs = []
    for cluster in clustering.clusters:
        if cluster.log_prob is None:
            raise MissingClusterProbs(
                "attach_cluster_probs must run before semantic_entropy"
            )
        log_probs.append(cluster.log_prob)
    value = -math.fsum(log_probs) / len(log_probs)
    return value + 0.0  # fold -0.0 into +0.0


def predictive_entropy(probs: Sequence[float]) -> float:
    """Negative mean ln(sample probability): the clustering-free baseline.

    Args:
        probs: Normalized sample probabilities summing to 1 within 1e-9.

    Raises:
        EmptySampleSet: On an empty vector.
    """
    if len(probs) == 0:
        raise EmptySampleSet("cannot score an empty probability vector")
    total = math.fsum(probs)
    if abs(total - 1.0) > CLUSTER_PROB_TOLERANCE:
        raise ValueError(f"probabilities sum to {total}, expected 1")
    value = -math.fsum(math.log(p) for p in probs) / len(probs)
    return value + 0.0  # fold -0.0 into +0.0


def compute_entropy_report(
    question_text: str,
    samples: Sequence[AnswerSample],
    equivalence: Callable[[str, str, str], bool],
    length_normalized: bool = False,
) -> EntropyReport:
    """Run the full chain: normalize, cluster, attach, score."""
    probs = normalize_sample_probs(samples, length_normalized=length_normalized)
    clustering = cluster_samples(question_text, samples, equivalence)
    attach_cluster_probs(clustering, probs)
    return EntropyReport(
        semantic_entropy=semantic_entropy(clustering),
        predictive_entropy=predictive_entropy(probs),
        clustering=clustering,
        normalized_sample_probs=probs,
        length_normalized=length_normalized,
    )
