import math

import numpy as np
import pytest

from treepolya.examples import ten_leaf_example
from treepolya.exceptions import DomainError, UsageError, ValidationError
from treepolya.model import TreePolyaModel, absorb_binomials, marginal_pmf
from treepolya.polya import (Dirac, NegativeBinomial, Poisson, SplitSpec,
                             sumlaw_log_pmf)
from treepolya.tree import PartitionTree

from conftest import enumerate_joint, simplex


def five_leaf(total=Dirac(8)):
    """Mixed-split 5-leaf tree: {{1,2},3,{4,5}} with c=1,0 splits."""
    tree = PartitionTree.from_nested([[1, 2], 3, [4, 5]])
    splits = {
        tree.ROOT: SplitSpec(1, (1.5, 1.0, 2.5)),
        tree.node_by_subset((1, 2)): SplitSpec(0, (0.4, 0.6)),
        tree.node_by_subset((4, 5)): SplitSpec(1, (0.7, 1.3)),
    }
    return TreePolyaModel(tree, splits, total)


class TestValidation:
    def test_missing_split_rejected(self):
        tree = PartitionTree.from_nested([[1, 2], 3])
        with pytest.raises(ValidationError):
            TreePolyaModel(tree, {tree.ROOT: SplitSpec(0, (0.5, 0.5))},
                           Dirac(4))

    def test_arity_mismatch_rejected(self):
        tree = PartitionTree.flat(3)
        with pytest.raises(ValidationError):
            TreePolyaModel(tree, {tree.ROOT: SplitSpec(0, (0.5, 0.5))},
                           Dirac(4))

    def test_hypergeometric_under_unbounded_total_rejected(self):
        tree = PartitionTree.flat(2)
        with pytest.raises(ValidationError):
            TreePolyaModel(tree, {tree.ROOT: SplitSpec(-1, (3, 4))},
                           Poisson(2.0))

    def test_hypergeometric_with_enough_weight_accepted(self):
        tree = PartitionTree.flat(2)
        model = TreePolyaModel(tree, {tree.ROOT: SplitSpec(-1, (4, 4))},
                               Dirac(6))
        assert model.parameter_count == 2


class TestJointPmf:
    def test_normalizes_over_simplex(self):
        model = five_leaf(Dirac(8))
        assert sum(enumerate_joint(model, 8).values()) == pytest.approx(
            1.0, abs=1e-12)

    def test_wrong_total_has_zero_mass(self):
        model = five_leaf(Dirac(8))
        assert model.joint_log_pmf(np.array([1, 1, 1, 1, 1])).sign == 0

    def test_poisson_total_normalizes(self):
        tree = PartitionTree.flat(2)
        model = TreePolyaModel(tree, {tree.ROOT: SplitSpec(1, (1.0, 2.0))},
                               Poisson(3.0))
        total = sum(model.joint_log_pmf(np.array(y)).to_float()
                    for n in range(60) for y in simplex(n, 2))
        assert total == pytest.approx(1.0, abs=1e-10)

    def test_factorizes_through_subsums(self):
        # pmf = sum-law(n) * product of per-node conditional splits
        model = five_leaf(Dirac(8))
        y = np.array([2, 1, 3, 1, 1])
        subs = model.node_subsums(y)
        tree = model.tree
        expect = sumlaw_log_pmf(8, model.sum_law).to_float()
        from treepolya.polya import polya_pmf
        for nid in tree.internal_ids:
            child = np.array([subs[c] for c in tree.children(nid)])
            expect *= polya_pmf(child, model.splits[nid]).to_float()
        assert model.joint_log_pmf(y).to_float() == pytest.approx(
            expect, rel=1e-12)


class TestMarginals:
    def test_closed_form_matches_enumeration(self):
        model = five_leaf(Dirac(8))
        table = enumerate_joint(model, 8)
        for leaf in range(1, 6):
            chain = model.leaf_marginal_chain(leaf)
            for n in range(9):
                brute = sum(p for y, p in table.items() if y[leaf - 1] == n)
                assert marginal_pmf(chain, n) == pytest.approx(
                    brute, abs=1e-10), f"leaf {leaf}, n={n}"

    def test_internal_node_marginal(self):
        model = five_leaf(Dirac(8))
        table = enumerate_joint(model, 8)
        node = model.tree.node_by_subset((4, 5))
        chain = model.marginal_chain(node)
        for n in range(9):
            brute = sum(p for y, p in table.items() if y[3] + y[4] == n)
            assert marginal_pmf(chain, n) == pytest.approx(brute, abs=1e-10)

    def test_nb_terminal_closed_form_branches_agree(self):
        # the small-p hypergeometric-series branch and the mixture branch
        # must agree with the generic nested-sum evaluation
        from treepolya.model import _chain_pmf_direct
        for p in (0.3, 0.6):
            model = ten_leaf_example(p=p)
            chain = model.leaf_marginal_chain(6)
            for n in range(11):
                got = marginal_pmf(chain, n)
                brute = _chain_pmf_direct(chain, n, 1e-15)
                assert got == pytest.approx(brute, rel=1e-7, abs=1e-12)

    def test_marginal_normalizes(self):
        model = ten_leaf_example()
        chain = model.leaf_marginal_chain(9)
        total = sum(marginal_pmf(chain, n) for n in range(2500))
        assert total == pytest.approx(1.0, abs=1e-8)


class TestAbsorption:
    def test_collapses_multinomial_stages(self):
        model = ten_leaf_example()
        chain = model.leaf_marginal_chain(9)
        collapsed = absorb_binomials(chain)
        assert all(stage.c != 0 for stage in collapsed.stages)
        for n in range(51):
            assert marginal_pmf(collapsed, n) == pytest.approx(
                marginal_pmf(chain, n), rel=1e-8, abs=1e-13)

    def test_pure_binomial_chain_collapses_to_terminal(self):
        tree = PartitionTree.from_nested([[1, 2], 3])
        splits = {tree.ROOT: SplitSpec(0, (0.6, 0.4)),
                  tree.node_by_subset((1, 2)): SplitSpec(0, (0.25, 0.75))}
        model = TreePolyaModel(tree, splits, NegativeBinomial(2.0, 0.5))
        collapsed = absorb_binomials(model.leaf_marginal_chain(1))
        assert not collapsed.stages
        law = collapsed.terminal
        # thinned NB keeps alpha, success odds scale with gamma
        gamma = 0.6 * 0.25
        expect_p = 0.5 * gamma / (1 - 0.5 * (1 - gamma))
        assert law.alpha == pytest.approx(2.0)
        assert law.p == pytest.approx(expect_p, rel=1e-12)

    def test_rejects_non_nb_terminal(self):
        model = five_leaf(Dirac(8))
        with pytest.raises(UsageError):
            absorb_binomials(model.leaf_marginal_chain(3))


class TestMoments:
    def test_factorial_moment_matches_enumeration(self):
        model = five_leaf(Dirac(8))
        table = enumerate_joint(model, 8)
        for r in [(1, 0, 0, 0, 0), (0, 1, 1, 0, 0), (2, 0, 0, 0, 1),
                  (1, 1, 1, 1, 1)]:
            brute = sum(p * math.prod(
                math.prod(range(y[k], y[k] - r[k], -1)) for k in range(5))
                for y, p in table.items())
            assert model.factorial_moment(r) == pytest.approx(
                brute, rel=1e-9, abs=1e-12)

    def test_node_moment_equals_vector_moment(self):
        model = ten_leaf_example()
        leaf = model.tree.leaf_node(6)
        r = [0] * 10
        r[5] = 3
        assert model.node_factorial_moment(leaf, 3) == pytest.approx(
            model.factorial_moment(r), rel=1e-10)

    def test_mean_variance_against_enumeration(self):
        model = five_leaf(Dirac(8))
        table = enumerate_joint(model, 8)
        for leaf in range(1, 6):
            node = model.tree.leaf_node(leaf)
            mean = sum(p * y[leaf - 1] for y, p in table.items())
            var = sum(p * y[leaf - 1] ** 2 for y, p in table.items()) \
                - mean ** 2
            assert model.node_mean(node) == pytest.approx(mean, rel=1e-10)
            assert model.node_variance(node) == pytest.approx(var, rel=1e-9)


class TestCovariance:
    def test_matches_enumeration(self):
        model = five_leaf(Dirac(8))
        table = enumerate_joint(model, 8)
        means = [sum(p * y[k] for y, p in table.items()) for k in range(5)]
        for i in range(1, 6):
            for j in range(1, 6):
                brute = sum(p * y[i - 1] * y[j - 1]
                            for y, p in table.items()) \
                    - means[i - 1] * means[j - 1]
                assert model.covariance(i, j) == pytest.approx(
                    brute, rel=1e-9, abs=1e-12), (i, j)

    def test_flat_tree_closed_form(self):
        # flat Dirichlet-multinomial over a Dirac total: the textbook
        # covariance -m * (m+|t|)/(1+|t|) * t_i t_j / |t|^2 ... verified
        # against enumeration, and the general path formula must agree
        theta = (1.0, 2.0, 3.0)
        tree = PartitionTree.flat(3)
        model = TreePolyaModel(tree, {tree.ROOT: SplitSpec(1, theta)},
                               Dirac(7))
        s = sum(theta)
        m = 7
        for i in range(1, 4):
            for j in range(1, 4):
                if i == j:
                    continue
                expect = -m * (s + m) / (s + 1) * theta[i - 1] \
                    * theta[j - 1] / s ** 2
                assert model.covariance(i, j) == pytest.approx(
                    expect, rel=1e-10)

    def test_monte_carlo_nb_model(self, rng):
        model = ten_leaf_example()
        draws = model.sample_many(400_000, rng).astype(float)
        cov = np.cov(draws, rowvar=False)
        for i, j in [(1, 2), (6, 7), (6, 9), (4, 8), (9, 10)]:
            exact = model.covariance(i, j)
            # rough standard error of a sample covariance
            se = np.std(
                (draws[:, i - 1] - draws[:, i - 1].mean())
                * (draws[:, j - 1] - draws[:, j - 1].mean())) \
                / math.sqrt(draws.shape[0])
            assert abs(cov[i - 1, j - 1] - exact) < 4 * se, (i, j)

    def test_covariance_ratio(self):
        model = ten_leaf_example()
        t = model.tree
        ratio, cov1, cov2 = model.covariance_ratio(
            t.leaf_node(6), t.leaf_node(7), t.leaf_node(9))
        assert ratio == pytest.approx(0.8 / 1.0)
        assert cov1 / cov2 == pytest.approx(ratio, rel=1e-10)

    def test_correlation_matrix_properties(self):
        model = ten_leaf_example()
        corr = model.correlation_matrix()
        assert np.allclose(np.diag(corr), 1.0)
        assert np.allclose(corr, corr.T)
        eigvals = np.linalg.eigvalsh(corr)
        assert eigvals.min() > -1e-10

    def test_correlation_decays_with_depth(self):
        model = ten_leaf_example()
        corr = model.correlation_matrix()
        # leaf 4's correlation weakens as the shared ancestor gets
        # shallower: sibling 5, then 3 (root child), then 1 (two deep
        # on the other side)
        assert abs(corr[3, 4]) > abs(corr[3, 2]) > abs(corr[3, 0])


class TestIndependence:
    def test_flat_dm_with_matched_nb_factorizes(self):
        theta = (1.0, 2.0, 1.5)
        tree = PartitionTree.flat(3)
        model = TreePolyaModel(
            tree, {tree.ROOT: SplitSpec(1, theta)},
            NegativeBinomial(sum(theta), 0.6))
        for y in [(0, 0, 0), (1, 2, 3), (4, 0, 2), (5, 5, 5)]:
            joint = model.joint_log_pmf(np.array(y)).to_float()
            product = math.prod(
                marginal_pmf(model.leaf_marginal_chain(k + 1), y[k])
                for k in range(3))
            assert joint == pytest.approx(product, rel=1e-10)
        for i in range(1, 4):
            for j in range(i + 1, 4):
                assert model.covariance(i, j) == pytest.approx(0, abs=1e-10)

    def test_cross_block_correlation_sign_flips_with_alpha(self):
        # the {6,7} x {8,9,10} correlation is exactly zero when the
        # sum-law shape matches the total weight of their ancestor split,
        # and changes sign on either side
        base = ten_leaf_example()
        s_node = base.tree.node_by_subset((4, 5, 6, 7, 8, 9, 10))
        alpha_star = base.splits[s_node].total  # 10.0
        at = ten_leaf_example(alpha=alpha_star).correlation_matrix()[5, 8]
        below = ten_leaf_example(alpha=alpha_star - 3).correlation_matrix()[5, 8]
        above = ten_leaf_example(alpha=alpha_star + 3).correlation_matrix()[5, 8]
        assert at == pytest.approx(0.0, abs=1e-12)
        assert above < 0 < below


class TestDispersion:
    def test_ten_leaf_report(self):
        report = ten_leaf_example().dispersion_report()
        assert report["sum_law"] == "over"
        assert all(entry["dispersion"] == "over"
                   for entry in report["nodes"].values())

    def test_dirac_total_is_under(self):
        # Var - E = -m < 0 for a point mass at m, and the deficit
        # propagates to every subsum
        report = five_leaf(Dirac(8)).dispersion_report()
        assert report["sum_law"] == "under"
        assert report["nodes"][0]["dispersion"] == "under"


class TestSampling:
    def test_sample_pmf_total_variation(self, rng):
        model = five_leaf(Dirac(4))
        table = enumerate_joint(model, 4)
        draws = model.sample_many(1_000_000, rng)
        keys = {k: i for i, k in enumerate(table)}
        counts = np.zeros(len(keys))
        for row in draws:
            counts[keys[tuple(row)]] += 1
        tv = 0.5 * sum(abs(counts[i] / draws.shape[0] - table[k])
                       for k, i in keys.items())
        assert tv < 5e-3

    def test_determinism(self):
        model = ten_leaf_example()
        a = model.sample_many(100, np.random.default_rng(11))
        b = model.sample_many(100, np.random.default_rng(11))
        assert np.array_equal(a, b)


class TestParameterCount:
    def test_running_example(self):
        # NB(2) + c=1 splits {1,2},{4..10},{6,7},{8,9,10} contribute
        # arity each (2+3+2+2) + c=0 splits root,{4,5},{9,10} contribute
        # arity-1 each (2+1+1)
        assert ten_leaf_example().parameter_count == 15
