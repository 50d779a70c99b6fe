import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mdmt.errors import ParseError
from mdmt.metrics import (
    AccuracyMatrix,
    BShotCurve,
    average_accuracy,
    emit_matrix,
    forgetting,
    lca,
    ltr,
    metrics_report,
    parse_matrix,
    read_matrix,
)

PUBLISHED = {
    "perm_mnist_mdmt_r": 0.9433,
    "perm_mnist_agem": 0.8932,
    "perm_mnist_mega": 0.9121,
    "split_cifar_mdmt_r": 0.6920,
    "split_cifar_agem": 0.6128,
    "split_cifar_mega": 0.6612,
}


def sheet_forgetting(a, t):
    """Cell-by-cell evaluation, written independently of the library."""
    total = 0.0
    for j in range(1, t):
        best = max(a[l - 1][j - 1] for l in range(j, t))
        total += best - a[t - 1][j - 1]
    return total / (t - 1)


def sheet_ltr(a):
    T = len(a)
    total = 0.0
    for j in range(1, T):
        total += (T - j) * min(0.0, a[T - 1][j - 1] - a[j - 1][j - 1])
    return -total / (T - 1)


def test_all_ones():
    m = AccuracyMatrix(np.ones((4, 4)))
    for t in range(1, 5):
        assert average_accuracy(m, t) == 1.0


def test_average_accuracy_range_error():
    m = AccuracyMatrix(np.ones((3, 3)))
    with pytest.raises(ValueError):
        average_accuracy(m, 0)
    with pytest.raises(ValueError):
        average_accuracy(m, 4)


def test_two_by_two():
    m = AccuracyMatrix([[0.9, 0.0], [0.8, 0.9]])
    assert forgetting(m, 2) == pytest.approx(0.1)
    assert ltr(m) == pytest.approx(0.1)
    assert average_accuracy(m, 2) == pytest.approx(0.85)


def test_forgetting_domain():
    with pytest.raises(ValueError):
        forgetting(AccuracyMatrix([[0.5]]), 1)
    with pytest.raises(ValueError):
        ltr(AccuracyMatrix([[0.5]]))


def test_no_drops_ltr_zero():
    a = np.tril(np.full((4, 4), 0.7))
    assert ltr(a) == 0.0


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**31))
def test_monotone_columns_nonpositive_forgetting(T, seed):
    rng = np.random.default_rng(seed)
    a = np.zeros((T, T))
    for j in range(T):
        a[j:, j] = np.sort(rng.uniform(size=T - j))
    assert forgetting(a, T) <= 1e-15


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 6).flatmap(lambda T: arrays(np.float64, (T, T), elements=st.floats(0, 1))))
def test_metric_ranges_and_sheet_agreement(a):
    T = a.shape[0]
    A = average_accuracy(a, T)
    F = forgetting(a, T)
    L = ltr(a)
    assert 0 <= A <= 1
    assert -1 <= F <= 1
    assert L >= 0
    assert F == pytest.approx(sheet_forgetting(a.tolist(), T), abs=1e-12)
    assert L == pytest.approx(sheet_ltr(a.tolist()), abs=1e-12)


def test_lca_cases():
    assert lca(BShotCurve(np.ones((3, 11)))) == 1.0
    c = BShotCurve([[0.1], [0.3]])
    assert c.beta == 0
    assert lca(c) == pytest.approx(0.2)
    assert lca(BShotCurve(np.full((4, 6), 0.37))) == pytest.approx(0.37)


def test_lca_definition():
    a_tb = np.array([[0.1, 0.5, 0.9], [0.3, 0.4, 0.5]])
    z = [(0.1 + 0.3) / 2, (0.5 + 0.4) / 2, (0.9 + 0.5) / 2]
    assert lca(BShotCurve(a_tb)) == pytest.approx(sum(z) / 3)
    assert lca(BShotCurve(a_tb).truncated(1)) == pytest.approx((z[0] + z[1]) / 2)
    with pytest.raises(ValueError):
        BShotCurve(a_tb).truncated(3)


def test_parse_padded_roundtrip():
    m = parse_matrix("1.0\n0.5 1.0".replace("1.0\n", "1.0 0.0\n"))
    assert m.T == 2
    assert parse_matrix(emit_matrix(m)) == m


def test_parse_accepts_commas_and_spaces():
    m = parse_matrix("0.5, 0.0\n0.25 0.75\n")
    assert np.array_equal(m.a, [[0.5, 0.0], [0.25, 0.75]])


@pytest.mark.parametrize("text", ["0.5 0\n0.5\n", "0.5 0\n0.5 x\n", "0.5 0\n0.5 1.5\n"])
def test_parse_errors_name_line(text):
    with pytest.raises(ParseError) as info:
        parse_matrix(text)
    assert info.value.line == 2
    assert "line 2" in str(info.value)


def test_parse_empty():
    with pytest.raises(ParseError):
        parse_matrix("\n\n")


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8).flatmap(lambda T: arrays(np.int64, (T, T), elements=st.integers(0, 10_000))))
def test_roundtrip_at_four_decimals(ints):
    m = AccuracyMatrix(ints / 10_000)
    assert parse_matrix(emit_matrix(m)) == m
    assert parse_matrix(emit_matrix(m, sep=" ")) == m


@pytest.mark.parametrize("name", sorted(PUBLISHED))
def test_published_fixtures(fixtures_dir, name):
    m = read_matrix(fixtures_dir / f"{name}.txt")
    assert m.T == 17
    tol = 0.005 if name in ("perm_mnist_mdmt_r", "perm_mnist_agem") else 0.02
    assert average_accuracy(m, 17) == pytest.approx(PUBLISHED[name], abs=tol)
    assert parse_matrix(emit_matrix(m)) == m


def test_mdmt_r_perm_mnist_values(fixtures_dir):
    m = read_matrix(fixtures_dir / "perm_mnist_mdmt_r.txt")
    assert average_accuracy(m, 17) == pytest.approx(0.9433, abs=5e-5)
    # values frozen from the cell-by-cell evaluation above
    assert forgetting(m, 17) == pytest.approx(sheet_forgetting(m.a.tolist(), 17), abs=1e-12)
    assert forgetting(m, 17) == pytest.approx(0.0228, abs=1e-4)
    assert ltr(m) == pytest.approx(sheet_ltr(m.a.tolist()), abs=1e-12)
    assert ltr(m) == pytest.approx(0.2478, abs=1e-4)


def test_agem_perm_mnist_value(fixtures_dir):
    m = read_matrix(fixtures_dir / "perm_mnist_agem.txt")
    assert average_accuracy(m, 17) == pytest.approx(0.8932, abs=5e-5)


def test_report_single_task():
    r = metrics_report([[0.8]])
    assert r["A_T"] == 0.8 and r["F_T"] is None and r["LTR"] is None and "note" in r


def test_report_trend():
    r = metrics_report([[0.9, 0.0], [0.8, 0.9]], curve=[[0.1, 0.2], [0.3, 0.4]])
    assert r["A_trend"] == pytest.approx([0.9, 0.85])
    assert r["LCA_beta"] == pytest.approx(0.25)
