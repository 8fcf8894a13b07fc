import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from mtbias.attention import (
    DegenerateSubsetError,
    attention_variance,
    read_attention,
    relative_alignment,
    validate,
)
from mtbias.schema import SchemaError

from oracles import variance_oracle


def row_stochastic(shape):
    return hnp.arrays(np.float64, shape, elements=st.floats(0.01, 1.0)).map(
        lambda a: a / a.sum(axis=1, keepdims=True))


matrices = st.tuples(st.integers(1, 6), st.integers(1, 6)).flatmap(row_stochastic)


def test_uniform_four_by_four():
    assert attention_variance(np.full((4, 4), 0.25)) == pytest.approx(0.3125, abs=1e-15)
    assert variance_oracle(np.full((4, 4), 0.25)) == pytest.approx(0.3125)


@pytest.mark.parametrize("n", [1, 3, 7])
def test_one_hot_diagonal_is_zero(n):
    assert attention_variance(np.eye(n)) == 0.0


def test_one_by_one():
    assert attention_variance([[1.0]]) == 0.0


@given(matrices)
def test_matches_double_loop(a):
    assert attention_variance(a) == pytest.approx(variance_oracle(a), abs=1e-9)


@given(matrices, st.randoms())
def test_row_permutation_invariant(a, rnd):
    idx = list(range(a.shape[0]))
    rnd.shuffle(idx)
    assert attention_variance(a[idx]) == pytest.approx(attention_variance(a), abs=1e-12)


@pytest.mark.parametrize("bad", [
    [[0.5, 0.4]], [[-0.1, 1.1]], [[np.nan, 1.0]], np.zeros((0, 3)), [1.0, 0.0],
])
def test_invalid_matrices(bad):
    with pytest.raises(ValueError):
        validate(bad)


def test_rows_renormalized_within_tolerance():
    a = validate([[0.50004, 0.5]])
    assert a.sum() == pytest.approx(1.0, abs=1e-15)


def test_ratio_identity_and_ratio_of_means():
    base = [np.eye(3), np.full((2, 2), 0.5)]
    assert relative_alignment([(b, b) for b in base]) == pytest.approx(1.0)
    # base rows perturbed to variance 0.1, comp uniform 4x4 with variance 0.3125
    b = np.array([[1 - 0.2, 0.2, 0, 0], [0.2, 1 - 0.2, 0, 0], [0, 0.2, 0.8, 0], [0, 0, 0.2, 0.8]])
    vb = attention_variance(b)
    comp = np.full((4, 4), 0.25)
    assert relative_alignment([(b, comp)] * 3) == pytest.approx(0.3125 / vb)


def test_ratio_duplicate_invariant():
    rng = np.random.default_rng(0)
    pairs = [(rng.dirichlet(np.ones(4), 3), rng.dirichlet(np.ones(5), 2)) for _ in range(5)]
    assert relative_alignment(pairs * 2) == pytest.approx(relative_alignment(pairs), rel=1e-12)


wide = st.tuples(st.integers(1, 6), st.integers(2, 6)).flatmap(row_stochastic)


@given(st.lists(st.tuples(wide, wide), min_size=1, max_size=5))
def test_ratio_above_one_when_every_comp_varies_more(drawn):
    # entries are >= 0.01 and rows have >= 2 columns, so every variance is positive
    pairs = [sorted(ab, key=attention_variance) for ab in drawn]
    assume(all(attention_variance(b) < attention_variance(c) for b, c in pairs))
    assert relative_alignment(pairs) > 1.0


def test_degenerate_subsets():
    with pytest.raises(DegenerateSubsetError):
        relative_alignment([])
    with pytest.raises(DegenerateSubsetError):
        relative_alignment([(np.eye(2), np.full((2, 2), 0.5))])


def test_attention_file_errors_name_line(tmp_path):
    f = tmp_path / "a.jsonl"
    f.write_text('{"pair_id": "x", "attention": [[1.0]]}\n{"pair_id": "y", "attention": [[0.2]]}\n')
    with pytest.raises(SchemaError, match=r"a\.jsonl:2"):
        read_attention(f)
