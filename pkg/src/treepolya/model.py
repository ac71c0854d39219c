"""Tree-structured Pólya splitting models.

A model is a partition tree with one Pólya split per internal node and a
univariate law on the grand total.  This module houses the joint p.m.f.,
exact sampling, closed-form marginals, factorial moments, and the
covariance / correlation structure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, List, Optional

import numpy as np
from scipy.special import gammaln

from .exceptions import DomainError, UsageError, ValidationError
from .polya import (Dirac, NegativeBinomial, SplitSpec, SumLaw, polya_pmf,
                    polya_sample_many, polya_uni_pmf, sumlaw_factorial_moment,
                    sumlaw_log_pmf, sumlaw_sample_many, sumlaw_support_max,
                    sumlaw_truncation_point)
from .special import (LogValue, ln_gen_factorial, pfq_convergent,
                      pfq_terminating)
from .tree import PartitionTree

__all__ = [
    "TreePolyaModel", "MarginalChain", "ChainStage", "PathConstants",
    "absorb_binomials", "marginal_pmf",
]


@dataclass(frozen=True)
class PathConstants:
    """Products of weight ratios along a node's path to the root.

    ``gamma`` multiplies first factorial moments, ``delta`` (with
    ``gamma``) second ones; both lie in (0, 1] and coincide when every
    split on the path is multinomial.
    """

    gamma: float
    delta: float


@dataclass(frozen=True)
class ChainStage:
    """One thinning stage of a marginal: a two-component Pólya with the
    focal weight ``theta_num`` against the combined rest ``theta_rest``."""

    c: int
    theta_num: float
    theta_rest: float


@dataclass(frozen=True)
class MarginalChain:
    """Marginal law of one node: thinning stages (leaf side first)
    terminated by the law of the grand total."""

    stages: tuple
    terminal: SumLaw


@dataclass(frozen=True)
class TreePolyaModel:
    tree: PartitionTree
    splits: Dict[int, SplitSpec]
    sum_law: SumLaw

    def __post_init__(self):
        internal = set(self.tree.internal_ids)
        if set(self.splits) != internal:
            raise ValidationError(
                f"splits given for nodes {sorted(self.splits)} but internal "
                f"nodes are {sorted(internal)}")
        for nid in internal:
            spec = self.splits[nid]
            arity = len(self.tree.children(nid))
            if spec.arity != arity:
                raise ValidationError(
                    f"node {nid} {self.tree.subset(nid)} has {arity} "
                    f"children but a {spec.arity}-component split")
        self._check_hypergeometric_support()

    def _check_hypergeometric_support(self):
        # conservative bound: every node inherits the sum law's maximum,
        # tightened to theta_C below a hypergeometric split
        bounds = {self.tree.ROOT: sumlaw_support_max(self.sum_law)}
        for nid in self._topo_order():
            if self.tree.is_leaf(nid):
                continue
            spec = self.splits[nid]
            bound = bounds[nid]
            if spec.c == -1:
                if bound is None:
                    raise ValidationError(
                        f"node {nid} {self.tree.subset(nid)} uses a "
                        "hypergeometric split under an unbounded total")
                if spec.total < bound:
                    raise ValidationError(
                        f"node {nid} {self.tree.subset(nid)}: |theta|="
                        f"{spec.total} is below the maximal total {bound}")
            for cid, theta_c in zip(self.tree.children(nid), spec.theta):
                child_bound = bound
                if spec.c == -1:
                    child_bound = int(round(theta_c)) if bound is None \
                        else min(bound, int(round(theta_c)))
                bounds[cid] = child_bound

    def _topo_order(self) -> List[int]:
        order, stack = [], [self.tree.ROOT]
        while stack:
            nid = stack.pop()
            order.append(nid)
            stack.extend(reversed(self.tree.children(nid)))
        return order

    # -- joint law ----------------------------------------------------

    def node_subsums(self, y) -> Dict[int, int]:
        y = np.asarray(y)
        return {nid: int(y[[j - 1 for j in self.tree.subset(nid)]].sum())
                for nid in range(len(self.tree))}

    def joint_log_pmf(self, y) -> LogValue:
        y = np.asarray(y)
        if y.shape != (self.tree.leaf_count,):
            raise UsageError(
                f"observation of length {y.shape} does not match "
                f"{self.tree.leaf_count} leaves")
        if np.any(y < 0):
            return LogValue.ZERO
        sums = self.node_subsums(y)
        out = sumlaw_log_pmf(sums[self.tree.ROOT], self.sum_law)
        for nid in self.tree.internal_ids:
            if out.sign == 0:
                return LogValue.ZERO
            child_counts = [sums[c] for c in self.tree.children(nid)]
            out = out * polya_pmf(child_counts, self.splits[nid])
        return out

    def sample_many(self, size: int, rng: np.random.Generator) -> np.ndarray:
        """Exact draws; returns shape (size, J) in leaf order."""
        totals = {self.tree.ROOT: sumlaw_sample_many(self.sum_law, size, rng)}
        out = np.zeros((size, self.tree.leaf_count), dtype=np.int64)
        for nid in self._topo_order():
            if self.tree.is_leaf(nid):
                out[:, self.tree.subset(nid)[0] - 1] = totals[nid]
                continue
            parts = polya_sample_many(totals[nid], self.splits[nid], rng)
            for k, cid in enumerate(self.tree.children(nid)):
                totals[cid] = parts[:, k]
        return out

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return self.sample_many(1, rng)[0]

    # -- paths and moments --------------------------------------------

    def _edge_weight(self, child: int) -> tuple:
        """(theta attached to ``child``, parent split) for a non-root node."""
        parent = self.tree.parent(child)
        spec = self.splits[parent]
        idx = self.tree.children(parent).index(child)
        return spec.theta[idx], spec

    def path_constants(self, node: int) -> PathConstants:
        gamma, delta = 1.0, 1.0
        nid = node
        while nid != self.tree.ROOT:
            theta, spec = self._edge_weight(nid)
            gamma *= theta / spec.total
            delta *= (theta + spec.c) / (spec.total + spec.c)
            nid = self.tree.parent(nid)
        return PathConstants(gamma, delta)

    def marginal_chain(self, node: int) -> MarginalChain:
        """Thinning-stage representation of the law of a node's subsum."""
        stages = []
        nid = node
        while nid != self.tree.ROOT:
            theta, spec = self._edge_weight(nid)
            stages.append(ChainStage(spec.c, theta, spec.total - theta))
            nid = self.tree.parent(nid)
        return MarginalChain(tuple(stages), self.sum_law)

    def leaf_marginal_chain(self, leaf_label: int) -> MarginalChain:
        return self.marginal_chain(self.tree.leaf_node(leaf_label))

    def factorial_moment(self, r) -> float:
        """Mixed factorial moment E[prod_j (Y_j)(Y_j-1)...(Y_j-r_j+1)]."""
        r = np.asarray(r, dtype=np.int64)
        if r.shape != (self.tree.leaf_count,):
            raise UsageError("moment order vector must have one entry per leaf")
        total = sumlaw_factorial_moment(int(r.sum()), self.sum_law)
        if total == 0.0:
            return 0.0
        acc = LogValue.from_float(total)
        for nid in self.tree.internal_ids:
            spec = self.splits[nid]
            r_a = 0
            for cid, theta_c in zip(self.tree.children(nid), spec.theta):
                r_c = int(r[[j - 1 for j in self.tree.subset(cid)]].sum())
                r_a += r_c
                acc = acc * ln_gen_factorial(theta_c, r_c, spec.c)
                if acc.sign == 0:
                    return 0.0
            acc = acc / ln_gen_factorial(spec.total, r_a, spec.c)
        return acc.to_float()

    def node_factorial_moment(self, node: int, r: int) -> float:
        """r-th factorial moment of the subsum at a node (root path
        product)."""
        total = sumlaw_factorial_moment(r, self.sum_law)
        if total == 0.0:
            return 0.0
        acc = LogValue.from_float(total)
        nid = node
        while nid != self.tree.ROOT:
            theta, spec = self._edge_weight(nid)
            num = ln_gen_factorial(theta, r, spec.c)
            if num.sign == 0:
                return 0.0
            acc = acc * num / ln_gen_factorial(spec.total, r, spec.c)
            nid = self.tree.parent(nid)
        return acc.to_float()

    def node_mean(self, node: int) -> float:
        return self.node_factorial_moment(node, 1)

    def node_variance(self, node: int) -> float:
        # Var = E[X(X-1)] + E[X](1 - E[X]); log-space stable pieces
        m1 = self.node_factorial_moment(node, 1)
        m2 = self.node_factorial_moment(node, 2)
        return m2 + m1 * (1.0 - m1)

    # -- covariance / correlation -------------------------------------

    def _pair_bracket(self, s: int) -> float:
        """Common factor of covariances separated at ancestor node s."""
        mu1 = sumlaw_factorial_moment(1, self.sum_law)
        mu2 = sumlaw_factorial_moment(2, self.sum_law)
        spec = self.splits[s]
        consts = self.path_constants(s)
        return (spec.total / (spec.total + spec.c)) \
            * (consts.delta / consts.gamma) * mu2 - mu1 ** 2

    def covariance(self, i: int, j: int) -> float:
        """Covariance of the leaf counts for 1-based labels i and j."""
        if i == j:
            return self.node_variance(self.tree.leaf_node(i))
        node_i = self.tree.leaf_node(i)
        node_j = self.tree.leaf_node(j)
        s, _, _ = self.tree.common_ancestor(node_i, node_j)
        gi = self.path_constants(node_i).gamma
        gj = self.path_constants(node_j).gamma
        return gi * gj * self._pair_bracket(s)

    def node_covariance(self, a: int, b: int) -> float:
        """Covariance of two disjoint node subsums."""
        sub_a, sub_b = set(self.tree.subset(a)), set(self.tree.subset(b))
        if sub_a & sub_b:
            raise UsageError("node subsets must be disjoint")
        s = a
        while not sub_b <= set(self.tree.subset(s)):
            s = self.tree.parent(s)
        ga = self.path_constants(a).gamma
        gb = self.path_constants(b).gamma
        return ga * gb * self._pair_bracket(s)

    def covariance_ratio(self, c_a1: int, c_a2: int, c_b: int):
        """Ratio of covariances against a third node; equals the weight
        ratio of the two siblings.  Returns (ratio, cov1, cov2)."""
        a = self.tree.parent(c_a1)
        if a is None or self.tree.parent(c_a2) != a:
            raise UsageError("first two nodes must be siblings")
        b = self.tree.parent(c_b)
        if b is None:
            raise UsageError("third node must not be the root")
        if b == a:
            raise UsageError("third node must come from a different split")
        if self.tree.parent(a) == b:
            raise UsageError("the siblings' parent must not be a child "
                             "of the third node's split")
        sub_b = set(self.tree.subset(b))
        for cid in (c_a1, c_a2):
            if sub_b <= set(self.tree.subset(cid)):
                raise UsageError("third node's parent descends from a sibling")
        theta1, _ = self._edge_weight(c_a1)
        theta2, _ = self._edge_weight(c_a2)
        return (theta1 / theta2, self.node_covariance(c_a1, c_b),
                self.node_covariance(c_a2, c_b))

    def correlation_matrix(self) -> np.ndarray:
        mu1 = sumlaw_factorial_moment(1, self.sum_law)
        mu2 = sumlaw_factorial_moment(2, self.sum_law)
        j_count = self.tree.leaf_count
        lam = np.zeros(j_count)
        for j in range(1, j_count + 1):
            consts = self.path_constants(self.tree.leaf_node(j))
            var = consts.gamma * (consts.delta * mu2
                                  + mu1 * (1.0 - consts.gamma * mu1))
            if var <= 0:
                raise DomainError(
                    f"leaf {j} has non-positive variance; correlation "
                    "undefined")
            lam[j - 1] = math.sqrt(consts.gamma / (consts.delta * mu2 + mu1
                                                   * (1.0 - consts.gamma * mu1)))
        out = np.eye(j_count)
        for i in range(1, j_count + 1):
            for j in range(i + 1, j_count + 1):
                ni, nj = self.tree.leaf_node(i), self.tree.leaf_node(j)
                s, _, _ = self.tree.common_ancestor(ni, nj)
                bracket = self._pair_bracket(s)
                value = 0.0 if bracket == 0.0 \
                    else lam[i - 1] * lam[j - 1] * bracket
                out[i - 1, j - 1] = out[j - 1, i - 1] = value
        return out

    def dispersion_report(self) -> dict:
        """Sign of Var - E for the total and every node subsum.

        Each entry is 'under', 'null', or 'over'; ``implied`` carries the
        sign forced by the split kinds along the path when one is forced.
        """
        mu1 = sumlaw_factorial_moment(1, self.sum_law)
        mu2 = sumlaw_factorial_moment(2, self.sum_law)

        def classify(excess):
            if abs(excess) < 1e-12:
                return "null"
            return "over" if excess > 0 else "under"

        report = {"sum_law": classify(mu2 - mu1 ** 2), "nodes": {}}
        for nid in range(len(self.tree)):
            consts = self.path_constants(nid)
            excess = consts.gamma * (consts.delta * mu2
                                     - consts.gamma * mu1 ** 2)
            implied = report["sum_law"]
            node = nid
            while node != self.tree.ROOT and implied is not None:
                _, spec = self._edge_weight(node)
                if spec.c == 1:
                    implied = "over" if implied in ("null", "over") else None
                elif spec.c == -1:
                    implied = "under" if implied in ("null", "under") else None
                node = self.tree.parent(node)
            report["nodes"][nid] = {
                "subset": self.tree.subset(nid),
                "dispersion": classify(excess),
                "implied": implied,
            }
        return report

    @property
    def parameter_count(self) -> int:
        """Free parameters: sum-law parameters plus per-split degrees."""
        from .polya import Poisson
        law_params = 1 if isinstance(self.sum_law, (Dirac, Poisson)) else 2
        count = law_params
        for spec in self.splits.values():
            count += spec.arity if spec.c == 1 else spec.arity - 1
        return count


# ---------------------------------------------------------------------
# Marginal p.m.f. machinery


def absorb_binomials(chain: MarginalChain) -> MarginalChain:
    """Collapse the multinomial stages of a chain into its negative
    binomial terminal, leaving only beta-binomial stages."""
    if not isinstance(chain.terminal, NegativeBinomial):
        raise UsageError("absorption needs a negative binomial terminal")
    if any(st.c == -1 for st in chain.stages):
        raise UsageError("absorption does not cover hypergeometric stages")
    gamma = 1.0
    kept = []
    for st in chain.stages:
        if st.c == 0:
            gamma *= st.theta_num / (st.theta_num + st.theta_rest)
        else:
            kept.append(st)
    p = chain.terminal.p
    new_p = p * gamma / (1.0 - p * (1.0 - gamma))
    return MarginalChain(tuple(kept),
                         NegativeBinomial(chain.terminal.alpha, new_p))


def _bb_log_prefactor(a: np.ndarray, b: np.ndarray, n: int) -> float:
    """log prod_k (a_k)_n / (a_k + b_k)_n."""
    out = 0.0
    for ak, bk in zip(a, b):
        out += math.lgamma(ak + n) - math.lgamma(ak)
        out -= math.lgamma(ak + bk + n) - math.lgamma(ak + bk)
    return out


def _marginal_pmf_nb(chain: MarginalChain, n: int, tail: float) -> float:
    chain = absorb_binomials(chain)
    law = chain.terminal
    alpha, p = law.alpha, law.p
    a = np.array([st.theta_num for st in chain.stages])
    b = np.array([st.theta_rest for st in chain.stages])
    if len(chain.stages) == 0:
        return sumlaw_log_pmf(n, law).to_float()
    log_pref = (_bb_log_prefactor(a, b, n)
                + math.lgamma(alpha + n) - math.lgamma(alpha)
                - math.lgamma(n + 1)
                + n * (math.log(p) - math.log1p(-p)))
    if p < 0.5:
        series = pfq_convergent([alpha + n] + list(a + n), list(a + b + n),
                                p / (p - 1.0))
        return math.exp(log_pref) * series
    # the outer mixture over an NB(alpha + n, p) weight alternates inside
    # its hypergeometric factors and loses precision as n grows, so for
    # large p the absorbed chain is summed directly (all-positive terms)
    vec = _chain_marginal_vector(chain, tail)
    return float(vec[n]) if n < vec.size else 0.0


def _marginal_pmf_dirac(chain: MarginalChain, n: int) -> float:
    m = chain.terminal.m
    if n > m:
        return 0.0
    gamma = 1.0
    kept = []
    for st in chain.stages:
        if st.c == 0:
            gamma *= st.theta_num / (st.theta_num + st.theta_rest)
        else:
            kept.append(st)
    a = np.array([st.theta_num for st in kept])
    b = np.array([st.theta_rest for st in kept])
    log_pref = (math.lgamma(m + 1) - math.lgamma(n + 1)
                - math.lgamma(m - n + 1)
                + _bb_log_prefactor(a, b, n) + n * math.log(gamma))
    series = pfq_terminating([n - m] + list(a + n), list(a + b + n), gamma)
    return math.exp(log_pref) * series


def _stage_kernel(stage: ChainStage, n_max: int) -> np.ndarray:
    """(n_max+1) x (n_max+1) matrix K[y, t] = P(subsum = y | total = t)
    for one thinning stage; strictly nonnegative entries."""
    a, bb, c = stage.theta_num, stage.theta_rest, stage.c
    t = np.arange(n_max + 1, dtype=float)[None, :]
    y = np.arange(n_max + 1, dtype=float)[:, None]
    rest = t - y
    valid = rest >= 0
    ys, rs, ts = (np.where(valid, v, 0.0) for v in (y, rest, t))
    choose = gammaln(ts + 1) - gammaln(ys + 1) - gammaln(rs + 1)
    if c == 0:
        pi = a / (a + bb)
        logk = choose + ys * math.log(pi) + rs * math.log1p(-pi)
    elif c == 1:
        logk = (choose + gammaln(a + ys) - gammaln(a)
                + gammaln(bb + rs) - gammaln(bb)
                - gammaln(a + bb + ts) + gammaln(a + bb))
    else:  # hypergeometric: integer urn of a + bb items
        valid &= (ys <= a) & (rs <= bb) & (ts <= a + bb)
        ys, rs, ts = (np.where(valid, v, 0.0) for v in (y, rest, t))
        logk = (gammaln(a + 1) - gammaln(ys + 1) - gammaln(a - ys + 1)
                + gammaln(bb + 1) - gammaln(rs + 1) - gammaln(bb - rs + 1)
                - gammaln(a + bb + 1) + gammaln(ts + 1)
                + gammaln(a + bb - ts + 1))
    return np.where(valid, np.exp(logk), 0.0)


@lru_cache(maxsize=32)
def _chain_marginal_vector(chain: MarginalChain, tail: float) -> np.ndarray:
    """Marginal pmf over 0..n_max by composing stage kernels from the
    root down; every intermediate quantity is a probability, so the
    computation is cancellation-free."""
    n_max = sumlaw_truncation_point(chain.terminal, tail)
    dist = np.array([sumlaw_log_pmf(k, chain.terminal).to_float()
                     for k in range(n_max + 1)])
    for st in reversed(chain.stages):  # root side first
        dist = _stage_kernel(st, n_max) @ dist
    dist.setflags(write=False)
    return dist


def _chain_pmf_direct(chain: MarginalChain, n: int, tail: float) -> float:
    """Generic finite summation; covers hypergeometric stages and
    bounded non-Dirac terminals."""
    vec = _chain_marginal_vector(chain, tail)
    return float(vec[n]) if n < vec.size else 0.0


def marginal_pmf(chain: MarginalChain, n: int, tail: float = 1e-14) -> float:
    """P.m.f. of a marginal chain at n.

    Closed hypergeometric forms cover multinomial / Dirichlet-multinomial
    stages over negative binomial or Dirac terminals; anything else falls
    back to direct finite summation.
    """
    if n < 0:
        return 0.0
    if not chain.stages:
        return sumlaw_log_pmf(n, chain.terminal).to_float()
    mixed_ok = all(st.c in (0, 1) for st in chain.stages)
    if mixed_ok and isinstance(chain.terminal, NegativeBinomial):
        return _marginal_pmf_nb(chain, n, tail)
    if mixed_ok and isinstance(chain.terminal, Dirac):
        return _marginal_pmf_dirac(chain, n)
    return _chain_pmf_direct(chain, n, tail)
