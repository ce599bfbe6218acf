import numpy as np
import pytest

from fmcb.tree import (
    BinMap,
    TreeConfig,
    build_bins,
    fit_regression_tree,
    predict_tree,
    predict_tree_batch,
)


def sse(t):
    return float(((t - t.mean()) ** 2).sum()) if len(t) else 0.0


def all_splits(binmap, feature):
    """Every (threshold, mask) candidate for one feature, straight from bins."""
    for j, thr in enumerate(binmap.thresholds[feature]):
        yield thr, binmap.codes[:, feature] <= j


def best_split_bruteforce(features, targets, binmap, min_leaf=1):
    """Exhaustive max-gain split, SSE computed directly on raw targets."""
    best = (0.0, None, None)
    total = sse(targets)
    for f in range(features.shape[1]):
        for thr, mask in all_splits(binmap, f):
            nl = int(mask.sum())
            if nl < min_leaf or len(targets) - nl < min_leaf:
                continue
            gain = total - sse(targets[mask]) - sse(targets[~mask])
            if gain > best[0]:
                best = (gain, f, thr)
    return best


def train_mse(tree, features, targets):
    return float(np.mean((predict_tree_batch(tree, features) - targets) ** 2))


class TestBuildBins:
    def test_constant_feature(self):
        bm = build_bins(np.ones((3, 1)))
        assert len(bm.thresholds[0]) == 0

    def test_exact_midpoints_when_few_distincts(self):
        bm = build_bins(np.array([[1.0], [2.0], [3.0], [4.0]]), max_bins=255)
        assert np.allclose(bm.thresholds[0], [1.5, 2.5, 3.5])
        assert list(bm.codes[:, 0]) == [0, 1, 2, 3]

    def test_quantile_bins_against_full_sort(self):
        rng = np.random.default_rng(0)
        vals = rng.uniform(0, 1, 10000)
        bm = build_bins(vals[:, None], max_bins=16)
        assert len(bm.thresholds[0]) == 15
        counts = np.bincount(bm.codes[:, 0], minlength=16)
        assert (np.abs(counts - 625) <= 60).all()
        # Cross-check each threshold against the sorted array: everything
        # at or below the cut must sit strictly under the threshold.
        s = np.sort(vals)
        for j, thr in enumerate(bm.thresholds[0]):
            below = counts[: j + 1].sum()
            assert s[below - 1] < thr <= s[below]

    def test_every_value_maps_to_one_bin(self):
        rng = np.random.default_rng(1)
        x = rng.integers(0, 50, size=(500, 3)).astype(float)
        bm = build_bins(x, max_bins=8)
        assert (bm.codes < 8).all()
        for f in range(3):
            th = bm.thresholds[f]
            assert (np.diff(th) > 0).all()


class TestFitRegressionTree:
    def test_constant_targets_single_leaf(self):
        rng = np.random.default_rng(2)
        bm = build_bins(rng.standard_normal((30, 2)))
        tree = fit_regression_tree(bm, np.full(30, 7.25))
        assert tree.num_nodes == 1
        assert tree.value[0] == 7.25

    def test_separable_step_function(self):
        rng = np.random.default_rng(3)
        x = rng.uniform(0, 1, size=(200, 2))
        y = (x[:, 0] > 0.5).astype(float)
        bm = build_bins(x)
        tree = fit_regression_tree(bm, y, TreeConfig(max_depth=1))
        assert tree.num_nodes == 3
        assert tree.feature[0] == 0
        # The chosen threshold must be the bin boundary nearest the true step.
        lo = x[x[:, 0] <= 0.5, 0].max()
        hi = x[x[:, 0] > 0.5, 0].min()
        assert lo < tree.threshold[0] <= hi
        assert sorted([tree.value[1], tree.value[2]]) == [0.0, 1.0]
        assert train_mse(tree, x, y) == 0.0

    def test_root_gain_matches_bruteforce(self):
        rng = np.random.default_rng(4)
        for _ in range(30):
            n = int(rng.integers(2, 11))
            d = int(rng.integers(1, 4))
            x = rng.standard_normal((n, d))
            y = rng.standard_normal(n)
            bm = build_bins(x)
            tree = fit_regression_tree(bm, y, TreeConfig(max_depth=1))
            gain_bf, f_bf, thr_bf = best_split_bruteforce(x, y, bm)
            if tree.num_nodes == 1:
                assert gain_bf <= 1e-9
                continue
            mask = x[:, tree.feature[0]] <= tree.threshold[0]
            gain_greedy = sse(y) - sse(y[mask]) - sse(y[~mask])
            assert gain_greedy == pytest.approx(gain_bf, rel=1e-9, abs=1e-9)

    def test_depth_two_matches_greedy_mirror(self):
        # Independent reimplementation of the same greedy rule on raw
        # targets (no histograms); tree SSE must coincide.
        rng = np.random.default_rng(5)
        for _ in range(20):
            x = rng.standard_normal((8, 2))
            y = rng.standard_normal(8)
            bm = build_bins(x)
            tree = fit_regression_tree(bm, y, TreeConfig(max_depth=2))

            def greedy_sse(rows, depth):
                t = y[rows]
                if depth == 2 or len(t) < 2:
                    return sse(t)
                sub = BinMap(bm.thresholds, bm.codes[rows], bm.max_bins)
                gain, f, thr = best_split_bruteforce(x[rows], t, sub)
                if f is None or gain <= 0:
                    return sse(t)
                mask = x[rows, f] <= thr
                return greedy_sse(rows[mask], depth + 1) + greedy_sse(rows[~mask], depth + 1)

            expected = greedy_sse(np.arange(8), 0)
            got = train_mse(tree, x, y) * 8
            assert got == pytest.approx(expected, rel=1e-9, abs=1e-9)

    def test_training_mse_bounded_by_variance(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((100, 4))
        y = rng.standard_normal(100)
        bm = build_bins(x)
        tree = fit_regression_tree(bm, y, TreeConfig(max_depth=4))
        assert train_mse(tree, x, y) <= y.var() + 1e-12

    def test_mse_monotone_in_depth(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((150, 3))
        y = x[:, 0] * x[:, 1] + 0.1 * rng.standard_normal(150)
        bm = build_bins(x)
        prev = np.inf
        for depth in range(1, 8):
            tree = fit_regression_tree(bm, y, TreeConfig(max_depth=depth))
            mse = train_mse(tree, x, y)
            assert mse <= prev + 1e-12
            prev = mse

    def test_min_leaf_respected(self):
        rng = np.random.default_rng(8)
        x = rng.standard_normal((60, 3))
        y = rng.standard_normal(60)
        bm = build_bins(x)
        tree = fit_regression_tree(bm, y, TreeConfig(max_depth=6, min_leaf_samples=7))
        leaves = tree.feature < 0
        assert (tree.count[leaves] >= 7).all()

    def test_deterministic(self):
        rng = np.random.default_rng(9)
        x = rng.standard_normal((80, 5))
        y = rng.standard_normal(80)
        bm = build_bins(x)
        t1 = fit_regression_tree(bm, y, TreeConfig(max_depth=5))
        t2 = fit_regression_tree(bm, y, TreeConfig(max_depth=5))
        for field in ("feature", "left", "right", "count"):
            assert np.array_equal(getattr(t1, field), getattr(t2, field))
        assert np.array_equal(t1.value, t2.value)
        nodes = t1.feature >= 0
        assert np.array_equal(t1.threshold[nodes], t2.threshold[nodes])

    def test_depth_limit(self):
        rng = np.random.default_rng(10)
        x = rng.standard_normal((200, 2))
        y = rng.standard_normal(200)
        bm = build_bins(x)
        tree = fit_regression_tree(bm, y, TreeConfig(max_depth=3))
        assert tree.max_depth_used <= 3


class TestPredict:
    def test_single_leaf(self):
        bm = build_bins(np.zeros((3, 2)))
        tree = fit_regression_tree(bm, np.full(3, 3.5))
        assert predict_tree(tree, np.array([100.0, -100.0])) == 3.5

    def test_step_routing(self):
        rng = np.random.default_rng(11)
        x = rng.uniform(0, 1, size=(100, 1))
        y = (x[:, 0] > 0.5).astype(float)
        tree = fit_regression_tree(build_bins(x), y, TreeConfig(max_depth=1))
        assert predict_tree(tree, np.array([0.9])) == 1.0
        assert predict_tree(tree, np.array([0.1])) == 0.0

    def test_prediction_replays_training_leaf_means(self):
        rng = np.random.default_rng(12)
        x = rng.standard_normal((120, 3))
        y = rng.standard_normal(120)
        bm = build_bins(x)
        tree = fit_regression_tree(bm, y, TreeConfig(max_depth=4, min_leaf_samples=3))
        # Group training rows by the leaf they route to; the leaf value must
        # be the mean of exactly those targets.
        leaf_of = np.empty(120, dtype=int)
        for i in range(120):
            nd = 0
            while tree.feature[nd] >= 0:
                nd = tree.left[nd] if x[i, tree.feature[nd]] <= tree.threshold[nd] else tree.right[nd]
            leaf_of[i] = nd
        for nd in np.unique(leaf_of):
            members = y[leaf_of == nd]
            assert tree.value[nd] == pytest.approx(members.mean(), rel=1e-12)
            assert tree.count[nd] == len(members)

    def test_batch_empty(self):
        bm = build_bins(np.zeros((2, 2)))
        tree = fit_regression_tree(bm, np.zeros(2))
        assert predict_tree_batch(tree, np.empty((0, 2))).shape == (0,)

    def test_batch_single_row(self):
        rng = np.random.default_rng(13)
        x = rng.standard_normal((50, 2))
        y = rng.standard_normal(50)
        tree = fit_regression_tree(build_bins(x), y, TreeConfig(max_depth=3))
        row = rng.standard_normal(2)
        assert predict_tree_batch(tree, row[None, :])[0] == predict_tree(tree, row)

    def test_batch_matches_rowwise(self):
        rng = np.random.default_rng(14)
        x = rng.standard_normal((300, 4))
        y = rng.standard_normal(300)
        tree = fit_regression_tree(build_bins(x), y, TreeConfig(max_depth=5))
        queries = rng.standard_normal((1000, 4))
        batch = predict_tree_batch(tree, queries)
        rowwise = np.array([predict_tree(tree, q) for q in queries])
        assert np.array_equal(batch, rowwise)

    def test_dimension_mismatch(self):
        tree = fit_regression_tree(build_bins(np.zeros((2, 3))), np.zeros(2))
        with pytest.raises(ValueError):
            predict_tree(tree, np.zeros(2))
        with pytest.raises(ValueError):
            predict_tree_batch(tree, np.zeros((4, 2)))


def test_tree_config_validation():
    with pytest.raises(ValueError):
        TreeConfig(max_depth=0)
    with pytest.raises(ValueError):
        TreeConfig(max_bins=1)
    with pytest.raises(ValueError):
        TreeConfig(min_leaf_samples=0)
