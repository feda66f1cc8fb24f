import hashlib
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tikuda import data
from tikuda.errors import (
    AsymmetricAdjacency,
    BadDimension,
    ConstantColumn,
    EmptyAfterCleaning,
    MissingColumn,
    SingularMixing,
)

FIXTURES = Path(__file__).parent / "fixtures"
GOLDEN_SHA256 = "842791c2647f35182d2db5eb9a01a29ec76c183a4facca07ea6b0f7617974173"
# deg + 1 per channel of the 10-20 nearest-neighbour graph, in EEG_CHANNELS order
EEG_ROW_SUMS = (5, 5, 5, 5, 4, 4, 4, 4, 5, 5, 4, 4, 5, 5, 5, 5, 6, 5, 6)


def series(n=20, cols=("a", "b", "y"), seed=0):
    v = np.random.default_rng(seed).standard_normal((n, len(cols)))
    return data.RawSeries(cols, v, cols[-1])


# ---------------------------------------------------------------- csv


def test_load_well_formed(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("a,b,y\n1,2,3\n4,5,6\n7,8,9\n")
    s = data.load_csv(p)
    assert len(s) == 3 and s.dropped == 0 and s.target == "y"
    np.testing.assert_array_equal(s.inputs, [[1, 2], [4, 5], [7, 8]])


def test_load_drops_bad_row(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("a,b,y\n1,2,3\n4,oops,6\n7,8,9\n")
    s = data.load_csv(p)
    assert len(s) == 2 and s.dropped == 1


def test_golden_file():
    path = FIXTURES / "golden_sensors.csv"
    assert hashlib.sha256(path.read_bytes()).hexdigest() == GOLDEN_SHA256
    s = data.load_csv(path, target="y")
    assert s.columns == ("s0", "s1", "s2", "y")
    assert s.dropped == 2
    np.testing.assert_array_equal(
        s.values,
        [[0.125, -1.5, 3.25, 10.0], [0.25, -1.25, 3.5, 10.5], [0.625, -0.5, 4.25, 12.0], [0.75, -0.25, 4.5, 12.5]],
    )
    # selecting columns ignores gaps in the ones left out
    s2 = data.load_csv(path, columns=["s1", "y"])
    assert len(s2) == 6 and s2.dropped == 0


def test_load_errors(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("a,y\n1,2\n")
    with pytest.raises(MissingColumn):
        data.load_csv(p, columns=["a", "b"], target="y")
    p.write_text("a,y\n1,\n,2\n")
    with pytest.raises(EmptyAfterCleaning):
        data.load_csv(p)
    with pytest.raises(FileNotFoundError):
        data.load_csv(tmp_path / "nope.csv")


def test_save_load_round_trip(tmp_path):
    s = series(7)
    data.save_csv(tmp_path / "s.csv", s)
    back = data.load_csv(tmp_path / "s.csv", target="y")
    np.testing.assert_array_equal(back.values, s.values)


# ---------------------------------------------------------------- normalizer


def test_normalizer_examples():
    src = data.RawSeries(("a", "y"), np.array([[0.0, 1.0], [10.0, 3.0]]), "y")
    norm = data.fit_normalizer(src)
    tgt = data.RawSeries(("a", "y"), np.array([[5.0, 2.0], [12.0, 5.0]]), "y")
    out = norm.apply(tgt).values
    assert out[0, 0] == 0.5 and out[1, 0] == pytest.approx(1.2)  # no clamping
    assert norm.label_range("y") == 2.0
    np.testing.assert_allclose(norm.denormalize_labels([0.5], "y"), [2.0])


def test_normalizer_own_domain_exact_unit_range():
    s = series(50, seed=3)
    out = data.fit_normalizer(s).apply(s).values
    assert np.all(out.min(axis=0) == 0.0) and np.all(out.max(axis=0) == 1.0)


def test_constant_column():
    s = data.RawSeries(("a", "y"), np.array([[1.0, 0.0], [1.0, 1.0]]), "y")
    with pytest.raises(ConstantColumn):
        data.fit_normalizer(s)


def test_normalizer_column_mismatch():
    norm = data.fit_normalizer(series())
    with pytest.raises(MissingColumn):
        norm.apply(series(cols=("a", "c", "y")))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), scale=st.floats(1e-3, 1e3))
def test_normalize_round_trip(seed, scale):
    s = series(12, seed=seed)
    s = data.RawSeries(s.columns, s.values * scale, s.target)
    norm = data.fit_normalizer(s)
    other = series(9, seed=seed + 1)
    back = norm.denormalize(norm.apply(other)).values
    np.testing.assert_allclose(back, other.values, atol=1e-12 * max(1.0, scale))


# ---------------------------------------------------------------- windowing


@pytest.mark.parametrize("length,count", [(20, 5), (16, 1), (15, 0)])
def test_window_counts(length, count):
    assert len(data.make_windows(series(length), 16, 1)) == count
    assert data.window_count(length, 16, 1) == count


def test_window_layout_and_labels():
    s = series(10)
    w = data.make_windows(s, 4, stride=3, domain="target")
    assert w.samples.shape == (3, 2, 4, 1) and w.domain == "target"
    np.testing.assert_array_equal(w.starts, [0, 3, 6])
    np.testing.assert_array_equal(w.labels[:, 0], s.labels[[3, 6, 9]])
    np.testing.assert_array_equal(w.samples[1, 0, :, 0], s.column("a")[3:7])
    assert w.node_names == ("a", "b")


def test_split_tail():
    w = data.make_windows(series(30), 4)
    head, tail = w.split_tail(0.2)
    assert len(head) + len(tail) == len(w) and len(tail) == round(0.2 * len(w))
    assert head.starts[-1] < tail.starts[0]


def test_window_args_validated():
    with pytest.raises(ValueError):
        data.make_windows(series(), 0)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(0, 40), T=st.integers(1, 12), stride=st.integers(1, 5))
def test_windows_reconstruct_source(n, T, stride):
    s = series(max(n, 1))
    w = data.make_windows(s, T, stride)
    assert len(w) == (max(n, 1) - T) // stride + 1 if max(n, 1) >= T else len(w) == 0
    X = s.inputs
    for i, start in enumerate(w.starts):
        assert start + T <= len(s)
        np.testing.assert_array_equal(w.samples[i, :, :, 0], X[start:start + T].T)
        assert w.labels[i, 0] == s.labels[start + T - 1]


# ---------------------------------------------------------------- graphs


def test_full_graph():
    np.testing.assert_array_equal(data.build_graph("full", 3).adjacency, np.ones((3, 3)))


def test_identity_file_graph(tmp_path):
    p = tmp_path / "a.txt"
    data.write_adjacency(p, np.eye(2))
    np.testing.assert_array_equal(data.build_graph("file", 2, p).adjacency, np.eye(2))


def test_file_graph_forces_self_loops(tmp_path):
    p = tmp_path / "a.txt"
    p.write_text("# ring\n0 1 1\n1 0 1\n1 1 0\n")
    np.testing.assert_array_equal(data.build_graph("adjacency-file", 3, p).adjacency, np.ones((3, 3)))


def test_graph_errors(tmp_path):
    p = tmp_path / "a.txt"
    p.write_text("1 1\n0 1\n")
    with pytest.raises(AsymmetricAdjacency):
        data.build_graph("file", 2, p)
    p.write_text("1 1\n1 1\n")
    with pytest.raises(BadDimension):
        data.build_graph("file", 3, p)
    p.write_text("1 1 0\n1 1\n")
    with pytest.raises(BadDimension):
        data.build_graph("file", 2, p)
    with pytest.raises(BadDimension):
        data.build_graph("full", 0)


def test_eeg_graph_fixture():
    g = data.eeg_graph()
    A = g.adjacency
    assert g.n_nodes == 19 and len(data.EEG_CHANNELS) == 19
    assert np.array_equal(A, A.T) and np.all(np.diag(A) == 1)
    assert tuple(A.sum(axis=1).astype(int)) == EEG_ROW_SUMS
    ch = data.EEG_CHANNELS
    assert A[ch.index("Fp1"), ch.index("Fp2")] == 1
    assert A[ch.index("Fp1"), ch.index("O1")] == 0


def test_eeg_task_graph_drops_target():
    g, names = data.eeg_task_graph("Fp1")
    assert g.n_nodes == 18 and "Fp1" not in names
    assert names[0] == "Fp2"


# ---------------------------------------------------------------- synthetic shift


def test_identity_spec_is_identity():
    base, _ = data.generate_base(200, 4, seed=1)
    src, tgt = data.synthesize_shift(base, data.ShiftSpec.identity(4))
    np.testing.assert_array_equal(src.values, tgt.values)


def test_pure_gain_doubles_column():
    base, _ = data.generate_base(100, 4, seed=2)
    spec = data.ShiftSpec((2.0, 1.0, 1.0, 1.0), (0.0,) * 4)
    _, tgt = data.synthesize_shift(base, spec)
    np.testing.assert_array_equal(tgt.column("s0"), 2.0 * base.column("s0"))
    np.testing.assert_array_equal(tgt.column("s1"), base.column("s1"))


def test_labels_follow_latent_ground_truth():
    base, latent = data.generate_base(300, 6, seed=3)
    np.testing.assert_array_equal(base.labels, data.ground_truth(latent))
    _, tgt = data.synthesize_shift(base, data.default_shift_spec())
    np.testing.assert_array_equal(tgt.labels, base.labels)


def test_shift_deterministic():
    base, _ = data.generate_base(100, 6, seed=4)
    a = data.synthesize_shift(base, data.default_shift_spec(seed=5))[1]
    b = data.synthesize_shift(base, data.default_shift_spec(seed=5))[1]
    c = data.synthesize_shift(base, data.default_shift_spec(seed=6))[1]
    assert np.array_equal(a.values, b.values) and not np.array_equal(a.values, c.values)


def test_singular_mixing():
    with pytest.raises(SingularMixing):
        data.ShiftSpec((1.0, 1.0), (0.0, 0.0), ((1.0, 1.0), (1.0, 1.0)))
    with pytest.raises(BadDimension):
        data.ShiftSpec((1.0, 1.0), (0.0,))


def test_rotation_mixing_is_orthogonal():
    M = data.rotation_mixing(5, [(0, 1), (2, 3)], 0.3)
    np.testing.assert_allclose(M @ M.T, np.eye(5), atol=1e-15)
    assert M[0, 0] == pytest.approx(math.cos(0.3))


def test_kde_overlap_decreases_with_shift():
    base, _ = data.generate_base(600, 2, seed=7)
    x = base.column("s0")
    overlaps = []
    for g in (1.0, 1.5, 2.0, 3.0):
        spec = data.ShiftSpec((g, 1.0), (g - 1.0, 0.0))
        _, tgt = data.synthesize_shift(base, spec)
        overlaps.append(data.kde_overlap(x, tgt.column("s0")))
    assert overlaps[0] == pytest.approx(1.0, abs=1e-3)  # tails beyond the grid are cut
    assert all(a > b for a, b in zip(overlaps, overlaps[1:]))


def test_generate_base_shape_and_names():
    base, latent = data.generate_base(50, 5, seed=8)
    assert base.columns == ("s0", "s1", "s2", "s3", "s4", "y")
    assert latent.shape == (50, 3)
    with pytest.raises(BadDimension):
        data.generate_base(50, 1)
