"""Count-matrix CSV ingestion and model JSON serialization."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .exceptions import ParseError, ValidationError
from .model import TreePolyaModel
from .polya import (Binomial, Dirac, NegativeBinomial, Poisson, SplitSpec,
                    SumLaw)
from .tree import PartitionTree

__all__ = ["CountMatrix", "load_counts_csv", "serialize_model",
           "parse_model", "SCHEMA_VERSION"]

SCHEMA_VERSION = "1"


@dataclass(frozen=True)
class CountMatrix:
    column_names: Tuple[str, ...]
    rows: np.ndarray  # n_sites x J, nonnegative integers

    def __post_init__(self):
        if self.rows.ndim != 2 or self.rows.shape[0] == 0:
            raise ValidationError("count matrix needs at least one row",
                                  ["empty matrix"])
        if self.rows.shape[1] != len(self.column_names):
            raise ValidationError(
                "column count does not match header",
                [f"{len(self.column_names)} names, "
                 f"{self.rows.shape[1]} columns"])
        if np.any(self.rows < 0):
            raise ValidationError("negative counts", ["negative entry"])

    @property
    def n_sites(self) -> int:
        return self.rows.shape[0]

    @property
    def n_columns(self) -> int:
        return self.rows.shape[1]


def load_counts_csv(path: str) -> CountMatrix:
    """Read a header-plus-integer-rows CSV into a count matrix.

    Malformed cells raise a parse error naming the offending row and
    column (1-based, header excluded from the row count).
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        names = tuple(name.strip() for name in header)
        if any(not n for n in names):
            raise ParseError(f"{path}: blank column name in header")
        if len(set(names)) != len(names):
            raise ParseError(f"{path}: duplicate column names")
        rows: List[List[int]] = []
        for r, record in enumerate(reader, start=1):
            if not record or (len(record) == 1 and not record[0].strip()):
                continue
            if len(record) != len(names):
                raise ParseError(
                    f"{path}: row {r} has {len(record)} fields, expected "
                    f"{len(names)}")
            parsed = []
            for c, cell in enumerate(record, start=1):
                text = cell.strip()
                try:
                    value = int(text)
                except ValueError:
                    raise ParseError(
                        f"{path}: row {r}, column {names[c - 1]!r}: "
                        f"{cell!r} is not an integer") from None
                if value < 0:
                    raise ParseError(
                        f"{path}: row {r}, column {names[c - 1]!r}: "
                        f"negative count {value}")
                parsed.append(value)
            rows.append(parsed)
    if not rows:
        raise ParseError(f"{path}: no data rows")
    return CountMatrix(names, np.array(rows, dtype=np.int64))


# ---------------------------------------------------------------------
# Model documents


def _law_to_doc(law: SumLaw) -> dict:
    if isinstance(law, NegativeBinomial):
        return {"family": "nb", "params": {"alpha": law.alpha, "p": law.p}}
    if isinstance(law, Poisson):
        return {"family": "poisson", "params": {"rate": law.rate}}
    if isinstance(law, Dirac):
        return {"family": "dirac", "params": {"m": law.m}}
    if isinstance(law, Binomial):
        return {"family": "binomial",
                "params": {"size": law.size, "prob": law.prob}}
    raise ParseError(f"unknown sum law {type(law).__name__}")


def _law_from_doc(doc: dict) -> SumLaw:
    _require_keys(doc, {"family", "params"}, "sum_law")
    family = doc["family"]
    params = doc["params"]
    try:
        if family == "nb":
            _require_keys(params, {"alpha", "p"}, "sum_law.params")
            return NegativeBinomial(float(params["alpha"]),
                                    float(params["p"]))
        if family == "poisson":
            _require_keys(params, {"rate"}, "sum_law.params")
            return Poisson(float(params["rate"]))
        if family == "dirac":
            _require_keys(params, {"m"}, "sum_law.params")
            return Dirac(int(params["m"]))
        if family == "binomial":
            _require_keys(params, {"size", "prob"}, "sum_law.params")
            return Binomial(int(params["size"]), float(params["prob"]))
    except (TypeError, ValueError) as exc:
        raise ParseError(f"bad sum-law parameters: {exc}") from exc
    raise ParseError(f"unknown sum-law family {family!r}")


def _require_keys(doc, expected, where):
    if not isinstance(doc, dict):
        raise ParseError(f"{where}: expected an object")
    unknown = set(doc) - expected
    if unknown:
        raise ParseError(f"{where}: unknown fields {sorted(unknown)}")
    missing = expected - set(doc)
    if missing:
        raise ParseError(f"{where}: missing fields {sorted(missing)}")


def _node_to_doc(model: TreePolyaModel, node: int,
                 names: Sequence[str]) -> dict:
    tree = model.tree
    if tree.is_leaf(node):
        return {"leaf": names[tree.subset(node)[0] - 1]}
    spec = model.splits[node]
    return {"children": [_node_to_doc(model, c, names)
                         for c in tree.children(node)],
            "split": {"c": spec.c, "theta": list(spec.theta)}}


def serialize_model(model: TreePolyaModel,
                    column_names: Sequence[str] = None) -> str:
    """Canonical JSON text for a model; leaf names default to the
    1-based leaf labels."""
    names = list(column_names) if column_names is not None else \
        [str(j) for j in range(1, model.tree.leaf_count + 1)]
    if len(names) != model.tree.leaf_count:
        raise ParseError(f"{len(names)} column names for "
                         f"{model.tree.leaf_count} leaves")
    doc = {"schema_version": SCHEMA_VERSION,
           "tree": _node_to_doc(model, model.tree.ROOT, names),
           "sum_law": _law_to_doc(model.sum_law)}
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def _collect_leaves(node_doc: dict, names: List[str], where: str) -> object:
    """Depth-first pass assigning leaf labels in document order; returns
    the nested label structure for the tree constructor."""
    if not isinstance(node_doc, dict):
        raise ParseError(f"{where}: expected an object")
    if "leaf" in node_doc:
        _require_keys(node_doc, {"leaf"}, where)
        if not isinstance(node_doc["leaf"], str) or not node_doc["leaf"]:
            raise ParseError(f"{where}: leaf name must be a nonempty string")
        names.append(node_doc["leaf"])
        return len(names)
    _require_keys(node_doc, {"children", "split"}, where)
    if not isinstance(node_doc["children"], list):
        raise ParseError(f"{where}: children must be a list")
    return [_collect_leaves(child, names, f"{where}.children[{i}]")
            for i, child in enumerate(node_doc["children"])]


def _collect_splits(node_doc: dict, tree: PartitionTree, node: int,
                    splits: dict) -> None:
    if "leaf" in node_doc:
        return
    split_doc = node_doc["split"]
    _require_keys(split_doc, {"c", "theta"}, "split")
    label = "{" + ",".join(map(str, tree.subset(node))) + "}"
    try:
        c = int(split_doc["c"])
        theta = tuple(float(t) for t in split_doc["theta"])
    except (TypeError, ValueError) as exc:
        raise ParseError(f"node {label}: bad split: {exc}") from exc
    if len(theta) != len(tree.children(node)):
        raise ParseError(f"node {label}: {len(theta)} weights for "
                         f"{len(tree.children(node))} children")
    splits[node] = SplitSpec(c, theta)
    for child, child_doc in zip(tree.children(node), node_doc["children"]):
        _collect_splits(child_doc, tree, child, splits)


def parse_model(text: str) -> Tuple[TreePolyaModel, Tuple[str, ...]]:
    """Inverse of :func:`serialize_model`.

    Returns the model and the leaf column names in depth-first (column)
    order.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}") from exc
    _require_keys(doc, {"schema_version", "tree", "sum_law"}, "document")
    if doc["schema_version"] != SCHEMA_VERSION:
        raise ParseError(
            f"unsupported schema_version {doc['schema_version']!r}")
    names: List[str] = []
    nested = _collect_leaves(doc["tree"], names, "tree")
    if not isinstance(nested, list):
        raise ParseError("tree root cannot be a single leaf")
    if len(set(names)) != len(names):
        raise ParseError("duplicate leaf names")
    tree = PartitionTree.from_nested(nested)
    splits: dict = {}
    _collect_splits(doc["tree"], tree, tree.ROOT, splits)
    law = _law_from_doc(doc["sum_law"])
    return TreePolyaModel(tree, splits, law), tuple(names)
