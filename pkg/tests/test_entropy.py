"""Entropy math: frozen values, clustering semantics, and invariants.

The frozen constants below were computed with an independent oracle (direct
evaluation of the defining formulas over exact inputs) before the module
under test existed; they must never be regenerated from its output.
"""

import math
import random
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semroute import (
    AnswerSample,
    Clustering,
    SemanticCluster,
    cluster_samples,
    compute_entropy_report,
    predictive_entropy,
    semantic_entropy,
)
from semroute.entropy import attach_cluster_probs, normalize_sample_probs
from semroute.errors import EmptySampleSet, LengthMismatch, MissingClusterProbs

# -(ln 0.7 + ln 0.3) / 2
SE_TWO_CLUSTER_70_30 = 0.7803238741323343
# -(ln 0.8 + ln 0.2) / 2
PE_80_20 = 0.916290731874155
LN_2 = 0.6931471805599453
LN_10 = 2.302585092994046


def sample(text, total_logprob, tokens=1):
    """An AnswerSample whose total is split evenly over `tokens` tokens."""
    per = total_logprob / tokens
    lps = [per] * tokens
    # fsum of equal halves can drift a hair from the intended total
    return AnswerSample.from_token_logprobs(text, lps)


def equal_text(_question, a, b):
    return a == b


def clustering_from_probs(probs):
    """One singleton cluster per probability, with log-probs attached."""
    clusters = [
        SemanticCluster(member_indices=[i], representative_index=i)
        for i in range(len(probs))
    ]
    clustering = Clustering(clusters=clusters, num_samples=len(probs))
    return attach_cluster_probs(clustering, probs)


def grouped_clustering(labels, probs):
    """Build a clustering from per-sample group labels, then attach probs."""
    order = []
    members = {}
    for index, label in enumerate(labels):
        if label not in members:
            members[label] = []
            order.append(label)
        members[label].append(index)
    clusters = [
        SemanticCluster(member_indices=members[label], representative_index=members[label][0])
        for label in order
    ]
    clustering = Clustering(clusters=clusters, num_samples=len(labels))
    return attach_cluster_probs(clustering, probs)


# --- frozen oracle values -----------------------------------------------


def test_semantic_entropy_two_clusters_frozen():
    clustering = grouped_clustering([0, 0, 1], [0.5, 0.2, 0.3])
    assert semantic_entropy(clustering) == pytest.approx(SE_TWO_CLUSTER_70_30, abs=1e-12)


def test_predictive_entropy_frozen():
    assert predictive_entropy([0.8, 0.2]) == pytest.approx(PE_80_20, abs=1e-12)


def test_predictive_entropy_trivial_cases():
    assert predictive_entropy([1.0]) == 0.0
    assert predictive_entropy([0.5, 0.5]) == pytest.approx(LN_2, abs=1e-15)


def test_uniform_singletons_hit_log_n():
    probs = [0.1] * 10
    assert semantic_entropy(clustering_from_probs(probs)) == pytest.approx(LN_10, abs=1e-12)
    assert predictive_entropy(probs) == pytest.approx(LN_10, abs=1e-12)


def test_normalize_sample_probs_frozen():
    samples = [sample("a", math.log(0.4)), sample("b", math.log(0.1))]
    probs = normalize_sample_probs(samples)
    assert probs[0] == pytest.approx(0.8, abs=1e-12)
    assert probs[1] == pytest.approx(0.2, abs=1e-12)
    assert math.fsum(probs) == pytest.approx(1.0, abs=1e-12)


def test_normalize_is_shift_invariant():
    # Softmax over logprobs must not change when every score shifts equally,
    # which is what the max-shift guards during exponentiation.
    base = [sample("a", -1.0), sample("b", -2.5), sample("c", -0.25)]
    shifted = [sample(s.text, s.total_logprob - 500.0) for s in base]
    assert normalize_sample_probs(base) == pytest.approx(
        normalize_sample_probs(shifted), abs=1e-12
    )


def test_normalize_handles_extreme_magnitudes():
    samples = [sample("a", -1000.0), sample("b", -1001.0)]
    probs = normalize_sample_probs(samples)
    assert all(p > 0 for p in probs)
    assert math.fsum(probs) == pytest.approx(1.0, abs=1e-12)


def test_length_normalization_flips_ordering():
    # Ten confident tokens lose to one mediocre token on raw total but win
    # once scores are divided by length.
    long_confident = sample("long answer", 10 * math.log(0.95), tokens=10)
    short_mediocre = sample("short", math.log(0.6))
    raw = normalize_sample_probs([long_confident, short_mediocre])
    assert raw[1] > raw[0]
    per_token = normalize_sample_probs(
        [long_confident, short_mediocre], length_normalized=True
    )
    assert per_token[0] > per_token[1]


# --- clustering semantics -------------------------------------------------


def test_identical_texts_single_cluster():
    samples = [sample("paris", -0.1)] * 4
    clustering = cluster_samples("q", samples, equal_text)
    assert len(clustering.clusters) == 1
    assert clustering.clusters[0].member_indices == [0, 1, 2, 3]
    assert clustering.clusters[0].representative_index == 0


def test_interleaved_texts_two_clusters():
    samples = [sample(t, -0.1) for t in ("a1", "b1", "a1", "b1")]
    clustering = cluster_samples("q", samples, equal_text)
    assert clustering.labels() == [0, 1, 0, 1]
    assert clustering.clusters[0].member_indices == [0, 2]
    assert clustering.clusters[1].member_indices == [1, 3]


def test_single_cluster_entropy_is_positive_zero():
    samples = [sample("same", -0.2)] * 3
    report = compute_entropy_report("q", samples, equal_text)
    assert report.semantic_entropy == 0.0
    assert math.copysign(1.0, report.semantic_entropy) == 1.0  # not -0.0
    assert len(report.clustering.clusters) == 1


def test_content_free_samples_form_closed_clusters():
    probed = []

    def recording(_question, a, b):
        probed.append((a, b))
        return a == b

    texts = ["...", "paris", "?!", "paris", "the"]
    samples = [sample(t, -0.5) for t in texts]
    clustering = cluster_samples("q", samples, recording)
    # indices 0, 2, 4 normalize to nothing: own clusters, never probed
    assert clustering.labels() == [0, 1, 2, 1, 3]
    assert all("paris" in pair[0] for pair in probed)
    assert all("paris" in pair[1] for pair in probed)


def test_greedy_probes_representative_only():
    # yy matches xx, zz matches yy but not xx: greedy compares against the
    # cluster representative (first member), so zz opens its own cluster.
    links = {("yy", "xx"), ("zz", "yy")}

    def chain(_question, x, y):
        return x == y or (x, y) in links or (y, x) in links

    samples = [sample(t, -0.3) for t in ("xx", "yy", "zz")]
    clustering = cluster_samples("q", samples, chain)
    assert clustering.labels() == [0, 0, 1]


def test_first_match_wins_on_overlap():
    # dd is equivalent to both earlier representatives; it must join the
    # earliest cluster, keeping creation order deterministic.
    def generous(_question, x, y):
        return x == y or "dd" in (x, y)

    samples = [sample(t, -0.3) for t in ("xx", "yy", "dd")]
    clustering = cluster_samples("q", samples, generous)
    assert clustering.labels() == [0, 1, 0]


def test_cluster_samples_rejects_empty():
    with pytest.raises(EmptySampleSet):
        cluster_samples("q", [], equal_text)
    with pytest.raises(EmptySampleSet):
        normalize_sample_probs([])
    with pytest.raises(EmptySampleSet):
        predictive_entropy([])


# --- greedy == connected components when the relation is transitive -------


def union_find_components(n, same_block):
    """Independent oracle: connected components via union-find."""
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i in range(n):
        for j in range(i + 1, n):
            if same_block(i, j):
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)
    groups = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    # order components by first member, matching greedy creation order
    return sorted(groups.values(), key=lambda g: g[0])


def test_greedy_equals_components_exhaustive():
    # Random transitive relations (i.e. partitions) over n <= 6 samples.
    rng = random.Random(20240817)
    trials = 0
    for _ in range(120):
        n = rng.randint(1, 6)
        labels = [rng.randrange(1, n + 1) for _ in range(n)]
        texts = [f"t{label}" for label in labels]
        samples = [sample(t, -0.4) for t in texts]
        clustering = cluster_samples("q", samples, equal_text)
        expected = union_find_components(
            n, lambda i, j: labels[i] == labels[j]
        )
        got = [c.member_indices for c in clustering.clusters]
        assert got == expected
        trials += 1
    assert trials >= 100


# --- attach/validate ------------------------------------------------------


def test_attach_rejects_length_mismatch():
    clustering = cluster_samples("q", [sample("a", -0.1)], equal_text)
    with pytest.raises(LengthMismatch):
        attach_cluster_probs(clustering, [0.5, 0.5])


def test_attach_rejects_unnormalized_probs():
    samples = [sample("a", -0.1), sample("b", -0.2)]
    clustering = cluster_samples("q", samples, equal_text)
    with pytest.raises(LengthMismatch):
        attach_cluster_probs(clustering, [0.9, 0.3])


def test_semantic_entropy_requires_attached_probs():
    clustering = cluster_samples("q", [sample("a", -0.1)], equal_text)
    with pytest.raises(MissingClusterProbs):
        semantic_entropy(clustering)


def test_predictive_entropy_rejects_bad_sum():
    with pytest.raises(ValueError):
        predictive_entropy([0.9, 0.3])


def test_cluster_validation():
    with pytest.raises(ValueError):
        SemanticCluster(member_indices=[], representative_index=0)
    with pytest.raises(ValueError):
        SemanticCluster(member_indices=[2, 1], representative_index=2)
    with pytest.raises(ValueError):
        SemanticCluster(member_indices=[1, 2], representative_index=2)
    with pytest.raises(ValueError):
        Clustering(
            clusters=[SemanticCluster(member_indices=[0], representative_index=0)],
            num_samples=2,
        )


def test_full_set_cluster_log_prob_pinned_to_zero():
    # Probabilities that fsum to 1 - epsilon must not yield log_prob != 0
    # for the cluster containing every sample.
    probs = [1 / 3, 1 / 3, 1 / 3]
    clustering = grouped_clustering([0, 0, 0], probs)
    assert clustering.clusters[0].log_prob == 0.0


def test_merge_effect_two_clusters():
    split = grouped_clustering([0, 1], [0.6, 0.4])
    merged = grouped_clustering([0, 0], [0.6, 0.4])
    before = semantic_entropy(split)
    assert semantic_entropy(merged) == 0.0
    assert before > 0.0


# --- report plumbing -------------------------------------------------------


def test_report_to_dict_round_trip_fields():
    samples = [sample("a", math.log(0.4)), sample("b", math.log(0.1))]
    report = compute_entropy_report("q", samples, equal_text)
    payload = report.to_dict()
    assert payload["semantic_entropy"] == report.semantic_entropy
    assert payload["predictive_entropy"] == report.predictive_entropy
    assert payload["length_normalized"] is False
    assert payload["clustering"]["num_samples"] == 2
    assert [c["member_indices"] for c in payload["clustering"]["clusters"]] == [[0], [1]]


def test_report_singletons_se_equals_pe():
    samples = [sample(t, lp) for t, lp in (("a", -0.3), ("b", -1.1), ("c", -2.0))]
    report = compute_entropy_report("q", samples, equal_text)
    assert report.semantic_entropy == report.predictive_entropy


# --- hypothesis properties -------------------------------------------------


def normalized_probs(draw, n):
    raw = [draw(st.floats(min_value=1e-6, max_value=1.0)) for _ in range(n)]
    total = math.fsum(raw)
    return [r / total for r in raw]


@st.composite
def labeled_probs(draw):
    n = draw(st.integers(min_value=1, max_value=12))
    labels = [draw(st.integers(min_value=0, max_value=n - 1)) for _ in range(n)]
    return labels, normalized_probs(draw, n)


@given(labeled_probs())
@settings(max_examples=200, deadline=None)
def test_property_lower_bound_and_zero_iff_one_cluster(case):
    labels, probs = case
    clustering = grouped_clustering(labels, probs)
    se = semantic_entropy(clustering)
    num_clusters = len(clustering.clusters)
    assert se >= math.log(num_clusters) - 1e-9
    if num_clusters == 1:
        assert se == 0.0
    else:
        assert se > 0.0


@given(labeled_probs())
@settings(max_examples=200, deadline=None)
def test_property_permutation_invariance(case):
    labels, probs = case
    se = semantic_entropy(grouped_clustering(labels, probs))
    order = list(range(len(labels)))
    random.Random(math.fsum(probs) * 1e6).shuffle(order)
    se_shuffled = semantic_entropy(
        grouped_clustering([labels[i] for i in order], [probs[i] for i in order])
    )
    assert se_shuffled == pytest.approx(se, abs=1e-9)


@given(st.lists(st.floats(min_value=-30.0, max_value=0.0), min_size=1, max_size=10))
@settings(max_examples=200, deadline=None)
def test_property_singleton_se_equals_pe(logprobs):
    samples = [sample(f"t{i}", lp) for i, lp in enumerate(logprobs)]
    report = compute_entropy_report("q", samples, lambda _q, a, b: a == b)
    assert abs(report.semantic_entropy - report.predictive_entropy) <= 1e-12
    assert report.semantic_entropy >= 0.0


@given(st.lists(st.floats(min_value=-30.0, max_value=0.0), min_size=1, max_size=10))
@settings(max_examples=100, deadline=None)
def test_property_normalize_sums_to_one(logprobs):
    samples = [sample(f"t{i}", lp) for i, lp in enumerate(logprobs)]
    for flag in (False, True):
        probs = normalize_sample_probs(samples, length_normalized=flag)
        assert math.fsum(probs) == pytest.approx(1.0, abs=1e-9)
        assert all(p > 0 for p in probs)


@given(
    st.lists(
        st.sampled_from(["red", "blue", "green", "red red"]),
        min_size=1,
        max_size=10,
    )
)
@settings(max_examples=100, deadline=None)
def test_property_cluster_count_matches_distinct_texts(texts):
    samples = [sample(t, -0.5) for t in texts]
    clustering = cluster_samples("q", samples, lambda _q, a, b: a == b)
    assert len(clustering.clusters) == len(set(texts))
    assert clustering.num_samples == len(texts)
    # partition check: every index appears exactly once
    seen = Counter(i for c in clustering.clusters for i in c.member_indices)
    assert all(v == 1 for v in seen.values())
    assert len(seen) == len(texts)
