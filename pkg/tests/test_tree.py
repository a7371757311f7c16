import numpy as np
import pytest

from structpen import build_tree, node_weights, tree_penalty
from structpen.errors import ConfigError
from structpen.tree import (TreeNode, TreeStructure, flat_groups, from_json,
                            to_json, tree_groups)

from oracles import complete_linkage_merges, nested_tree_penalty


def two_leaf_tree(h):
    nodes = [
        TreeNode(group=(0,), height=0.0),
        TreeNode(group=(1,), height=0.0),
        TreeNode(group=(0, 1), height=h, children=(0, 1)),
    ]
    return node_weights(TreeStructure(nodes=nodes, root=2, m=2))


def three_level_tree(h_a, h_r, prune_root=False):
    """leaves 0,1 under node a; leaf 2 joins at the root."""
    nodes = [
        TreeNode(group=(0,), height=0.0),
        TreeNode(group=(1,), height=0.0),
        TreeNode(group=(2,), height=0.0),
        TreeNode(group=(0, 1), height=h_a, children=(0, 1)),
        TreeNode(group=(0, 1, 2), height=h_r, children=(3, 2), pruned=prune_root),
    ]
    return node_weights(TreeStructure(nodes=nodes, root=4, m=3))


class TestBuildTree:
    def test_perfectly_correlated_pair_unpruned_at_any_threshold(self, rng):
        y = rng.standard_normal(20)
        Y = np.column_stack([y, 2 * y + 1])
        for rho in (0.0, 0.5, 1.0):
            tree = build_tree(Y, rho_star=rho)
            root = tree.nodes[tree.root]
            assert root.height == 0.0
            assert not root.pruned

    def test_rho_zero_prunes_everything(self, rng):
        Y = rng.standard_normal((30, 6))
        tree = build_tree(Y, rho_star=0.0)
        assert all(tree.nodes[i].pruned for i in tree.internal)
        # penalty degenerates to a plain l1 norm over leaves
        B = rng.standard_normal((4, 6))
        assert tree_penalty(B, tree, 0.7) == pytest.approx(0.7 * np.abs(B).sum())

    def test_matches_brute_force_agglomeration(self, rng):
        Y = rng.standard_normal((10, 6))
        tree = build_tree(Y, rho_star=1.0)
        D = 1 - np.corrcoef(Y, rowvar=False)
        np.fill_diagonal(D, 0.0)
        merges = complete_linkage_merges(np.maximum(D, 0.0))
        got = [(frozenset(tree.nodes[c].group) for c in tree.nodes[i].children)
               for i in tree.internal]
        for (ga, gb, d), i in zip(merges, tree.internal):
            children = {frozenset(tree.nodes[c].group)
                        for c in tree.nodes[i].children}
            assert children == {ga, gb}
        # heights normalized by the largest merge
        dmax = merges[-1][2]
        for (ga, gb, d), i in zip(merges, tree.internal):
            assert tree.nodes[i].height == pytest.approx(d / dmax, abs=1e-12)

    def test_constant_column_named(self):
        Y = np.ones((10, 3))
        Y[:, 0] = np.arange(10)
        Y[:, 2] = np.arange(10) ** 2
        with pytest.raises(ConfigError, match="column 2"):
            build_tree(Y, 0.5)

    def test_single_column_rejected(self, rng):
        with pytest.raises(ConfigError):
            build_tree(rng.standard_normal((10, 1)), 0.5)

    def test_keep_high_mode_inverts_pruning(self, rng):
        Y = rng.standard_normal((30, 5))
        drop = build_tree(Y, rho_star=0.5, prune_mode="drop_high")
        keep = build_tree(Y, rho_star=0.5, prune_mode="keep_high")
        for i in drop.internal:
            assert drop.nodes[i].pruned != keep.nodes[i].pruned


class TestNodeWeights:
    def test_worked_example_weights(self):
        tree = two_leaf_tree(0.5)
        flat = {tuple(cols): w for cols, w in flat_groups(tree)}
        assert flat[(0,)] == pytest.approx(1.5)
        assert flat[(1,)] == pytest.approx(1.5)
        assert flat[(0, 1)] == pytest.approx(0.5)

    def test_full_height_kills_joint_groups(self):
        tree = three_level_tree(1.0, 1.0)
        joint = [w for cols, w in flat_groups(tree) if len(cols) > 1]
        assert joint == []  # weight-zero groups dropped from the flat list
        assert tree.nodes[3].weight == 0.0
        assert tree.nodes[4].weight == 0.0

    def test_three_level_products(self):
        h_a, h_r = 0.3, 0.8
        tree = three_level_tree(h_a, h_r)
        assert tree.nodes[0].weight == pytest.approx(1 + h_r * h_a)
        assert tree.nodes[1].weight == pytest.approx(1 + h_r * h_a)
        assert tree.nodes[2].weight == pytest.approx(1 + h_r)
        assert tree.nodes[3].weight == pytest.approx((1 - h_a) * h_r)
        assert tree.nodes[4].weight == pytest.approx(1 - h_r)

    def test_pruned_root_drops_h_factor(self):
        h_a = 0.4
        tree = three_level_tree(h_a, 0.9, prune_root=True)
        assert tree.nodes[0].weight == pytest.approx(1 + h_a)
        assert tree.nodes[2].weight == pytest.approx(1.0)  # no surviving ancestor
        assert tree.nodes[3].weight == pytest.approx(1 - h_a)
        assert tree.nodes[4].weight == 0.0

    def test_flat_equals_recursive_on_random_trees(self, rng):
        for trial in range(12):
            m = int(rng.integers(2, 12))
            Y = rng.standard_normal((25, m))
            rho = float(rng.choice([1.0, 1.0, 0.8, 0.6]))
            tree = build_tree(Y, rho_star=rho)
            B = rng.standard_normal((5, m))
            lam = float(rng.uniform(0.1, 2.0))
            flat_val = tree_penalty(B, tree, lam)
            rec_val = nested_tree_penalty(B, tree, lam)
            assert abs(flat_val - rec_val) <= 1e-12 * max(abs(rec_val), 1.0)

    def test_cycle_detection(self):
        nodes = [
            TreeNode(group=(0,), height=0.0),
            TreeNode(group=(1,), height=0.0),
            TreeNode(group=(0, 1), height=0.5, children=(0, 1)),
        ]
        tree = TreeStructure(nodes=nodes, root=2, m=2)
        tree.nodes[2].children = (0, 1, 2)  # introduce a self-loop
        with pytest.raises(ConfigError, match="cycle"):
            node_weights(tree)


class TestTreePenalty:
    def test_hand_value_13(self):
        tree = two_leaf_tree(0.5)
        B = np.array([[3.0, 4.0]])
        assert tree_penalty(B, tree, 1.0) == pytest.approx(13.0)

    def test_hand_value_14(self):
        tree = two_leaf_tree(1.0)
        B = np.array([[3.0, 4.0]])
        assert tree_penalty(B, tree, 1.0) == pytest.approx(14.0)

    def test_hand_value_10(self):
        tree = two_leaf_tree(0.0)
        B = np.array([[5.0, 0.0]])
        assert tree_penalty(B, tree, 1.0) == pytest.approx(10.0)

    def test_positive_homogeneity(self, rng):
        Y = rng.standard_normal((20, 5))
        tree = build_tree(Y, 0.9)
        B = rng.standard_normal((4, 5))
        for c in (0.5, 2.0, 7.3):
            lhs = tree_penalty(c * B, tree, 1.3)
            rhs = c * tree_penalty(B, tree, 1.3)
            assert abs(lhs - rhs) <= 1e-12 * max(abs(rhs), 1.0)

    def test_convexity(self, rng):
        Y = rng.standard_normal((20, 4))
        tree = build_tree(Y, 1.0)
        for _ in range(20):
            B1 = rng.standard_normal((3, 4))
            B2 = rng.standard_normal((3, 4))
            t = rng.uniform()
            mix = tree_penalty(t * B1 + (1 - t) * B2, tree, 1.0)
            bound = (t * tree_penalty(B1, tree, 1.0)
                     + (1 - t) * tree_penalty(B2, tree, 1.0))
            assert mix <= bound + 1e-10

    def test_shape_mismatch(self, rng):
        tree = two_leaf_tree(0.5)
        with pytest.raises(ConfigError):
            tree_penalty(np.zeros((2, 3)), tree, 1.0)


class TestTreeJson:
    def test_round_trip(self, tmp_path, rng):
        Y = rng.standard_normal((20, 5))
        tree = build_tree(Y, 0.9)
        to_json(tree, tmp_path / "t.json")
        back = from_json(tmp_path / "t.json")
        assert back.m == tree.m
        for a, b in zip(tree.nodes, back.nodes):
            assert a.group == b.group
            assert a.height == pytest.approx(b.height)
            assert a.weight == pytest.approx(b.weight)
            assert a.pruned == b.pruned

    def test_prior_knowledge_tree_usable(self, tmp_path):
        tree = two_leaf_tree(0.25)
        to_json(tree, tmp_path / "t.json")
        back = from_json(tmp_path / "t.json")
        B = np.array([[3.0, 4.0]])
        assert tree_penalty(B, back, 1.0) == pytest.approx(
            tree_penalty(B, tree, 1.0))

    def test_group_spec_export(self, rng):
        tree = two_leaf_tree(0.5)
        spec = tree_groups(tree)
        weights = sorted(g.weight for g in spec.groups)
        assert weights == pytest.approx([0.5, 1.5, 1.5])
        assert all(g.q == 2.0 for g in spec.groups)
