import itertools
import json
import logging

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from getd.errors import CapacityError, ConfigurationError, DataError, InfeasibleError
from getd.datasets import (
    KnowledgeBase,
    SyntheticSpec,
    Vocab,
    generate_synthetic,
    kb_to_tensor,
    load_kb,
    load_kb_dir,
    nearest_feasible_count,
    split_dataset,
    support_sizes,
    write_kb,
    write_synthetic,
)


def write_lines(path, lines):
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return path


@pytest.fixture
def tuple_files(tmp_path):
    train = write_lines(tmp_path / "train.txt", ["r1\ta\tb\tc", "r2\tb\tc\td", "r1\te\ta\tb"])
    valid = write_lines(tmp_path / "valid.txt", ["r1\ta\tc\tb"])
    test = write_lines(tmp_path / "test.txt", ["r3\tf\ta\tb"])
    return train, valid, test


# --- load_kb ------------------------------------------------------------------------


def test_load_counts(tmp_path):
    paths = [write_lines(tmp_path / "train.txt", ["r\ta\tb\tc", "r\tc\td\te", "s\te\ta\tb"])]
    paths += [write_lines(tmp_path / n, []) for n in ("valid.txt", "test.txt")]
    kb = load_kb(*paths)
    assert kb.n_entities == 5
    assert kb.arity == 3
    assert kb.n_relations == 2


def test_ids_follow_first_appearance(tuple_files):
    kb = load_kb(*tuple_files)
    assert kb.entities.labels == ["a", "b", "c", "d", "e", "f"]
    assert kb.relations.labels == ["r1", "r2", "r3"]
    np.testing.assert_array_equal(kb.train[0], [0, 0, 1, 2])
    np.testing.assert_array_equal(kb.test[0], [2, 5, 0, 1])


def test_unseen_labels_counted(tuple_files, caplog):
    with caplog.at_level(logging.WARNING):
        kb = load_kb(*tuple_files)
    assert kb.metadata["unseen_in_train"] == {"entities": 1, "relations": 1}
    assert "only in valid/test" in caplog.text


def test_ragged_arity_reports_line(tmp_path):
    train = write_lines(tmp_path / "train.txt", ["r\ta\tb", "r\ta\tb\tc"])
    empty = write_lines(tmp_path / "e.txt", [])
    with pytest.raises(DataError, match=r"train.txt:2"):
        load_kb(train, empty, empty)


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_kb(tmp_path / "nope", tmp_path / "nope", tmp_path / "nope")


def test_all_empty(tmp_path):
    empty = write_lines(tmp_path / "e.txt", [])
    with pytest.raises(DataError):
        load_kb(empty, empty, empty)


def test_split_overlap_warned(tmp_path, caplog):
    train = write_lines(tmp_path / "train.txt", ["r\ta\tb"])
    valid = write_lines(tmp_path / "valid.txt", ["r\ta\tb"])
    empty = write_lines(tmp_path / "e.txt", [])
    with caplog.at_level(logging.WARNING):
        kb = load_kb(train, valid, empty)
    assert kb.metadata["split_overlap"] == 1


def test_load_write_load_identity(tuple_files, tmp_path):
    kb = load_kb(*tuple_files)
    again = load_kb_dir(write_kb(kb, tmp_path / "copy"))
    assert again.entities.labels == kb.entities.labels
    assert again.relations.labels == kb.relations.labels
    for s in ("train", "valid", "test"):
        np.testing.assert_array_equal(again.split(s), kb.split(s))


def test_vocab_is_bidirectional():
    v = Vocab(["x", "y"])
    assert v.add("y") == 1
    assert v.add("z") == 2
    assert v.labels[v.ids["z"]] == "z"
    assert "x" in v and len(v) == 3


def test_unknown_split_name(tuple_files):
    with pytest.raises(DataError):
        load_kb(*tuple_files).split("dev")


# --- split_dataset ----------------------------------------------------------------


@pytest.mark.parametrize("n,expected", [(500, (400, 50, 50)), (10, (8, 1, 1)), (1500, (1200, 150, 150)), (7, (7, 0, 0))])
def test_split_sizes(n, expected):
    parts = split_dataset(np.arange(n)[:, None], seed=0)
    assert tuple(len(p) for p in parts) == expected


def test_split_deterministic_and_disjoint():
    facts = np.arange(100)[:, None]
    a = split_dataset(facts, seed=3)
    b = split_dataset(facts, seed=3)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)
    np.testing.assert_array_equal(np.sort(np.concatenate(a)[:, 0]), np.arange(100))


@pytest.mark.parametrize("ratios", [(0.5, 0.5), (0.8, 0.1, 0.2), (1.2, -0.1, -0.1)])
def test_bad_ratios(ratios):
    with pytest.raises(ConfigurationError):
        split_dataset(np.arange(10)[:, None], ratios)


@given(n=st.integers(0, 300), a=st.integers(1, 10), b=st.integers(0, 10), c=st.integers(0, 10))
def test_split_sizes_follow_ratios(n, a, b, c):
    total = a + b + c
    parts = split_dataset(np.arange(n)[:, None], (a / total, b / total, c / total), seed=1)
    assert sum(len(p) for p in parts) == n
    assert abs(len(parts[1]) - n * b / total) < 1
    assert abs(len(parts[2]) - n * c / total) < 1


# --- synthetic -------------------------------------------------------------------


@pytest.mark.parametrize(
    "arity,count,expected",
    [(3, 500, (400, 50, 50)), (4, 1500, (1200, 150, 150))],
)
def test_synthetic_table_sizes(arity, count, expected):
    kb = generate_synthetic(SyntheticSpec(10, 2, arity, count))
    assert (len(kb.train), len(kb.valid), len(kb.test)) == expected
    assert (kb.n_entities, kb.n_relations) == (10, 2)


def test_single_fact():
    kb = generate_synthetic(SyntheticSpec(5, 3, 2, 1))
    assert kb.metadata["support_sizes"] == [1, 1, 1]
    assert len(kb.all_facts()) == 1


def test_infeasible_count_suggests_nearest():
    # 7 is prime and exceeds every support bound
    with pytest.raises(InfeasibleError, match="nearest feasible count is 6"):
        generate_synthetic(SyntheticSpec(3, 2, 2, 7))
    assert nearest_feasible_count(3, 2, 2, 7) == 6


def test_count_over_capacity():
    with pytest.raises(InfeasibleError):
        SyntheticSpec(3, 2, 2, 19)


def test_support_sizes_brute_force():
    for count in range(1, 40):
        got = support_sizes(4, 2, 2, count)
        exists = any(
            s0 * s1 * s2 == count for s0, s1, s2 in itertools.product(range(1, 3), range(1, 5), range(1, 5))
        )
        assert (got is not None) == exists
        if got is not None:
            assert int(np.prod(got)) == count


def test_synthetic_matches_regenerated_supports():
    spec = SyntheticSpec(6, 3, 2, 24, seed=5)
    kb = generate_synthetic(spec)
    T = kb_to_tensor(kb)
    rng = np.random.default_rng(5)
    sizes = kb.metadata["support_sizes"]
    inds = []
    for s, n in zip(sizes, (3, 6, 6)):
        v = np.zeros(n)
        v[rng.choice(n, s, replace=False)] = 1
        inds.append(v)
    np.testing.assert_array_equal(T, np.einsum("i,j,k->ijk", *inds))


@given(
    n_e=st.integers(2, 5),
    n_r=st.integers(1, 3),
    arity=st.integers(1, 3),
    frac=st.floats(0, 1),
    seed=st.integers(0, 1000),
)
def test_synthetic_tensor_is_combinatorial_rectangle(n_e, n_r, arity, frac, seed):
    capacity = n_r * n_e**arity
    count = max(1, int(frac * capacity))
    if support_sizes(n_e, n_r, arity, count) is None:
        count = nearest_feasible_count(n_e, n_r, arity, count)
    T = kb_to_tensor(generate_synthetic(SyntheticSpec(n_e, n_r, arity, count, seed=seed)))
    assert T.sum() == count
    true = [tuple(i) for i in np.argwhere(T == 1)]
    # rank one over a binary pattern: swapping any one coordinate between two true tuples stays true
    for a, b in itertools.islice(itertools.product(true, true), 400):
        for mode in range(T.ndim):
            c = list(a)
            c[mode] = b[mode]
            assert T[tuple(c)] == 1


def test_splits_disjoint():
    kb = generate_synthetic(SyntheticSpec(10, 2, 3, 500))
    seen = [set(map(tuple, kb.split(s).tolist())) for s in ("train", "valid", "test")]
    assert not (seen[0] & seen[1] or seen[0] & seen[2] or seen[1] & seen[2])


def test_write_synthetic_provenance(tmp_path):
    spec = SyntheticSpec(10, 2, 3, 500, seed=2)
    kb = generate_synthetic(spec)
    d = write_synthetic(kb, spec, tmp_path / "s")
    prov = json.loads((d / "provenance.json").read_text())
    assert prov["spec"]["seed"] == 2
    assert int(np.prod(prov["support_sizes"])) == 500
    again = load_kb_dir(d)
    np.testing.assert_array_equal(again.train, kb.train)
    assert again.entities.labels == kb.entities.labels


# --- kb_to_tensor -------------------------------------------------------------------


def test_empty_kb_zero_tensor():
    empty = np.zeros((0, 3), dtype=np.int64)
    kb = KnowledgeBase(2, Vocab(["a", "b"]), Vocab(["r"]), empty, empty, empty)
    assert not kb_to_tensor(kb).any()


def test_single_fact_tensor():
    empty = np.zeros((0, 3), dtype=np.int64)
    kb = KnowledgeBase(2, Vocab("abc"), Vocab(["r"]), np.array([[0, 1, 2]]), empty, empty)
    T = kb_to_tensor(kb)
    assert T.sum() == 1 and T[0, 1, 2] == 1


def test_tensor_capacity():
    kb = generate_synthetic(SyntheticSpec(10, 2, 3, 500))
    with pytest.raises(CapacityError):
        kb_to_tensor(kb, cap=100)
