"""JSON tree documents and CSV matrices/tables."""

import csv
import io
import json
import math
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from pydantic import BaseModel, Field, ValidationError, model_validator

from .config import config
from .errors import GeometryError, MetricError, TreeError
from .metric_core import FiniteMetricSpace
from .tree_graph import MetricTree, tree_from_edges

DIGITS = config.output.digits


class NodeEntry(BaseModel):
    id: str
    label: str = ""


class EdgeEntry(BaseModel):
    a: str
    b: str
    len: float = Field(gt=0)


class TreeDocument(BaseModel):
    schema_version: str = config.output.schema_version
    nodes: list[NodeEntry]
    edges: list[EdgeEntry]
    metadata: dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check_ids(self):
        ids = [node.id for node in self.nodes]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ValueError(f"Duplicate node ids: {dupes}")
        known = set(ids)
        for edge in self.edges:
            for end in (edge.a, edge.b):
                if end not in known:
                    raise ValueError(f"Edge references unknown node {end!r}")
        return self


def rounded(value: Any, digits: int = DIGITS) -> Any:
    """Rounds every float inside a JSON-like value to ``digits`` significant digits."""
    if isinstance(value, bool) or value is None:
        return value
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if not math.isfinite(value):
            return None if math.isnan(value) else ("inf" if value > 0 else "-inf")
        return float(f"{value:.{digits}g}")
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, np.ndarray):
        return rounded(value.tolist(), digits)
    if isinstance(value, dict):
        return {str(k): rounded(v, digits) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [rounded(v, digits) for v in value]
    return value


def dumps(value: Any) -> str:
    """Canonical JSON text for reports: sorted keys, rounded floats."""
    return json.dumps(rounded(value), indent=2, sort_keys=True)


def tree_document(T: MetricTree) -> TreeDocument:
    return TreeDocument(
        nodes=[NodeEntry(id=name, label=label) for name, label in zip(T.vertices, T.labels)],
        edges=[EdgeEntry(a=T.vertices[u], b=T.vertices[v], len=length) for u, v, length in T.edges],
        metadata=T.metadata,
    )


def serialize_tree(T: MetricTree) -> str:
    return dumps(tree_document(T).model_dump())


def parse_tree(text: str) -> MetricTree:
    """Validated MetricTree from a JSON tree document."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise TreeError(f"Tree document is not valid JSON: {e}")
    try:
        doc = TreeDocument.model_validate(data)
    except ValidationError as e:
        raise TreeError(f"Tree document failed schema validation: {e}")
    return tree_from_edges(
        [node.id for node in doc.nodes],
        [(edge.a, edge.b, edge.len) for edge in doc.edges],
        labels=[node.label for node in doc.nodes],
        metadata=doc.metadata,
    )


def read_tree(path: str | Path) -> MetricTree:
    try:
        text = Path(path).read_text()
    except FileNotFoundError:
        raise GeometryError(f"Tree file not found at {path}")
    return parse_tree(text)


def write_text(path: str | Path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text if text.endswith("\n") else text + "\n")


# --- CSV ---

def matrix_to_csv(space: FiniteMetricSpace) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(space.labels)
    for row in space.dist:
        writer.writerow([f"{x:.{DIGITS}g}" for x in row])
    return buffer.getvalue()


def matrix_from_csv(text: str) -> FiniteMetricSpace:
    rows = [row for row in csv.reader(io.StringIO(text)) if row]
    if not rows:
        raise MetricError("Empty CSV matrix")
    labels, body = rows[0], rows[1:]
    try:
        dist = np.array([[float(x) for x in row] for row in body], dtype=float)
    except ValueError as e:
        raise MetricError(f"Non-numeric entry in CSV matrix: {e}")
    if dist.shape != (len(labels), len(labels)):
        raise MetricError(f"CSV matrix has {len(labels)} labels but shape {dist.shape}")
    return FiniteMetricSpace.from_matrix(dist, labels)


def read_space(path: str | Path) -> tuple[FiniteMetricSpace, MetricTree | None]:
    """Reads a CSV distance matrix, or a JSON tree together with its matrix."""
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise GeometryError(f"Input file not found at {path}")
    if path.suffix.lower() == ".csv":
        return matrix_from_csv(text), None
    tree = parse_tree(text)
    return tree.space, tree


def table_to_csv(rows: Sequence[BaseModel], columns: Sequence[str]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        values = row.model_dump()
        writer.writerow(
            [f"{values[c]:.{DIGITS}g}" if isinstance(values[c], float) else values[c] for c in columns]
        )
    return buffer.getvalue()
