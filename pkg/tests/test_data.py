import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from harfuse.data import (
    DataValidationError,
    DatasetSplit,
    LabelCatalog,
    SkeletonSequence,
    SkeletonTopology,
    SyntheticSpec,
    class_frequency,
    default_topology,
    generate_synthetic,
    iter_batches,
    load_catalog,
    load_jsonl,
    load_topology,
    resample,
    write_catalog,
    write_jsonl,
    write_topology,
)
from harfuse.metrics import labels_to_segments

CAT = LabelCatalog(("walk", "sit"))


def seq(T=4, J=2, C=2, rate=10.0, sid="s"):
    frames = np.arange(T * J * C, dtype=np.float32).reshape(T, J, C)
    return SkeletonSequence(sid, rate, frames, np.zeros(T, dtype=np.int64))


# -- catalog / topology ------------------------------------------------------------


def test_catalog_rejects_duplicates_and_singletons():
    with pytest.raises(DataValidationError):
        LabelCatalog(("a", "a"))
    with pytest.raises(DataValidationError):
        LabelCatalog(("a",))


def test_topology_validation():
    with pytest.raises(DataValidationError):
        SkeletonTopology(2, ((0, 2),), (0, 0))  # edge out of range
    with pytest.raises(DataValidationError):
        SkeletonTopology(2, ((0, 0),), (0, 0))  # self loop
    with pytest.raises(DataValidationError):
        SkeletonTopology(3, ((0, 1),), (0, 1, 2))  # pooling must shrink the graph
    with pytest.raises(DataValidationError):
        SkeletonTopology(3, ((0, 1),), (0, 2, 2))  # cluster 1 empty


def test_topology_json_round_trip_and_fingerprint(tmp_path):
    topo = default_topology()
    write_topology(tmp_path / "t.json", topo)
    back = load_topology(tmp_path / "t.json")
    assert back == topo and back.fingerprint() == topo.fingerprint()
    other = SkeletonTopology(8, topo.edges[:-1], topo.pooling_map)
    assert other.fingerprint() != topo.fingerprint()


def test_catalog_round_trip(tmp_path):
    write_catalog(tmp_path / "c.json", CAT)
    assert load_catalog(tmp_path / "c.json") == CAT


# -- JSONL -------------------------------------------------------------------------


def test_load_one_line(tmp_path):
    p = tmp_path / "a.jsonl"
    obj = {"id": "x", "sampling_rate_hz": 30, "frames": [[[0, 1], [2, 3]], [[4, 5], [6, 7]]], "labels": ["walk", "walk"]}
    p.write_text(json.dumps(obj) + "\n")
    (s,) = load_jsonl(p, CAT)
    assert s.frames.shape == (2, 2, 2)
    assert s.labels.tolist() == [0, 0]


def test_unknown_label_names_line_and_label(tmp_path):
    p = tmp_path / "a.jsonl"
    obj = {"id": "x", "sampling_rate_hz": 30, "frames": [[[0.0]]], "labels": ["jump"]}
    p.write_text(json.dumps(obj) + "\n")
    with pytest.raises(DataValidationError, match=r"line 1.*'jump'"):
        load_jsonl(p, CAT)


@pytest.mark.parametrize(
    "patch",
    [
        {"frames": [[[0.0, 1.0]], [[0.0]]], "labels": ["walk", "walk"]},
        {"sampling_rate_hz": 0},
        {"sampling_rate_hz": -3},
        {"labels": ["walk", "walk"]},
    ],
)
def test_invalid_lines_rejected(tmp_path, patch):
    obj = {"id": "x", "sampling_rate_hz": 30, "frames": [[[0.0]]], "labels": ["walk"]}
    obj.update(patch)
    p = tmp_path / "a.jsonl"
    p.write_text(json.dumps(obj) + "\n")
    with pytest.raises(DataValidationError, match="line 1"):
        load_jsonl(p, CAT)


def test_empty_file(tmp_path):
    p = tmp_path / "e.jsonl"
    p.write_text("")
    assert load_jsonl(p, CAT) == []


def test_write_load_round_trip(tmp_path):
    split, cat = generate_synthetic(SyntheticSpec(K=3, T=12, per_class_count=2))
    write_jsonl(tmp_path / "x.jsonl", split.train, cat)
    assert load_jsonl(tmp_path / "x.jsonl", cat) == split.train


def test_split_ids_disjoint():
    with pytest.raises(DataValidationError):
        DatasetSplit([seq(sid="a")], [seq(sid="a")])


# -- resample ----------------------------------------------------------------------


def test_resample_same_rate_is_identity():
    s = seq()
    r = resample(s, 10.0)
    assert r == s and r.frames is not s.frames


def test_resample_upsample_interpolates():
    s = SkeletonSequence("s", 1.0, np.array([[[0.0]], [[2.0]]]), np.array([0, 1]))
    r = resample(s, 2.0)
    np.testing.assert_allclose(r.frames[:, 0, 0], [0, 2 / 3, 4 / 3, 2], rtol=1e-6)
    assert r.labels.tolist() == [0, 0, 1, 1]
    assert r.sampling_rate_hz == 2.0


def test_resample_downsample_keeps_endpoints():
    s = SkeletonSequence("s", 4.0, np.arange(4, dtype=float).reshape(4, 1, 1), np.array([0, 0, 1, 1]))
    r = resample(s, 2.0)
    assert r.T == 2
    assert r.frames[0, 0, 0] == 0.0 and r.frames[-1, 0, 0] == 3.0


@given(st.integers(1, 40), st.floats(1.0, 60.0), st.floats(1.0, 60.0))
def test_resample_length_rule(T, src, dst):
    s = SkeletonSequence("s", src, np.zeros((T, 1, 1)), np.zeros(T, dtype=int))
    r = resample(s, dst)
    assert r.T == max(1, int(np.floor(T * dst / src + 0.5)))
    assert r.labels.shape == (r.T,)


# -- batching ----------------------------------------------------------------------


def test_batch_sizes():
    seqs = [seq(sid=str(i)) for i in range(10)]
    assert [len(b) for b in iter_batches(seqs, 4, 0, 0)] == [4, 4, 2]


def test_batches_deterministic_and_epoch_dependent():
    seqs = [seq(sid=str(i)) for i in range(10)]
    order = lambda e: [s.id for b in iter_batches(seqs, 4, 1, e) for s in b]
    assert order(3) == order(3)
    assert sorted(order(3)) == sorted(s.id for s in seqs)
    distinct = {tuple(order(e)) for e in range(10)}
    assert len(distinct) >= 9


def test_empty_dataset_yields_nothing():
    assert list(iter_batches([], 4, 0, 0)) == []


# -- synthetic generator -----------------------------------------------------------


def test_default_split_sizes():
    split, cat = generate_synthetic(SyntheticSpec())
    assert (len(split.train), len(split.test)) == (160, 40)
    assert len(cat) == 5
    assert split.train[0].frames.shape == (100, 8, 3)


def test_generator_deterministic():
    a, _ = generate_synthetic(SyntheticSpec(K=3, T=20, per_class_count=3, seed=9))
    b, _ = generate_synthetic(SyntheticSpec(K=3, T=20, per_class_count=3, seed=9))
    c, _ = generate_synthetic(SyntheticSpec(K=3, T=20, per_class_count=3, seed=10))
    assert a.train == b.train and a.test == b.test
    assert a.train != c.train


def test_noise_free_segments_are_pure_sinusoids():
    spec = SyntheticSpec(K=2, T=60, per_class_count=3, noise_std=0.0)
    split, _ = generate_synthetic(spec)
    for s in split.train + split.test:
        x = s.frames.astype(np.float64)
        for seg in labels_to_segments(s.labels):
            w = 2 * np.pi * class_frequency(seg.label) / spec.sampling_rate_hz
            inner = x[seg.start + 1:seg.end]
            # x[t+1] + x[t-1] = 2 cos(w) x[t] holds exactly for one sinusoid
            lhs = x[seg.start + 2:seg.end + 1] + x[seg.start:seg.end - 1]
            np.testing.assert_allclose(lhs, 2 * np.cos(w) * inner, atol=1e-5)


@given(
    st.integers(2, 6), st.integers(4, 40), st.integers(2, 5), st.integers(0, 1000)
)
def test_generator_labels_well_formed(K, T, pcc, seed):
    split, _ = generate_synthetic(SyntheticSpec(K=K, J=2, C=1, T=T, per_class_count=pcc, seed=seed))
    for n, s in enumerate(sorted(split.train + split.test, key=lambda s: s.id)):
        assert s.labels.shape == (T,)
        assert s.labels[0] == n % K
        assert 0 <= s.labels.min() and s.labels.max() < K
        assert 2 <= len(labels_to_segments(s.labels)) <= 4


def test_spec_rejects_unknown_keys_and_bad_K():
    with pytest.raises(DataValidationError):
        SyntheticSpec.from_json({"K": 3, "bogus": 1})
    with pytest.raises(DataValidationError):
        SyntheticSpec(K=1)
