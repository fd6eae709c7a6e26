"""Naive Bayes classification over discretized metric attributes.

Training is closed-form counting with Laplace smoothing; inference
scores classes in log space (prior plus per-attribute conditional
log-likelihoods) and normalizes with a max-shifted exponentiation, so
long feature vectors with small probabilities do not underflow.
Missing attribute values simply drop their factor.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import warnings
from dataclasses import dataclass
from typing import Sequence

__all__ = [
    "AttributeSchema",
    "NbcModel",
    "LabeledExample",
    "TrainingError",
    "AllZeroLikelihoodError",
    "ModelFormatError",
    "train",
    "posterior",
    "classify",
    "save_model",
    "load_model",
    "read_training_csv",
    "write_training_csv",
    "load_schema",
]


class TrainingError(ValueError):
    pass


class AllZeroLikelihoodError(ValueError):
    """Every class has zero likelihood for the given features."""


class ModelFormatError(ValueError):
    """Persisted model fails hash or invariant checks."""


@dataclass(frozen=True)
class AttributeSchema:
    """Ordered attributes with cardinalities, plus the class label set."""

    attributes: tuple[tuple[str, int], ...]
    classes: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.attributes:
            raise ValueError("schema needs at least one attribute")
        if len(self.classes) < 2:
            raise ValueError("schema needs at least two classes")
        names = [a for a, _ in self.attributes]
        if len(set(names)) != len(names):
            raise ValueError("attribute names must be unique")
        if len(set(self.classes)) != len(self.classes):
            raise ValueError("class labels must be unique")
        for name, card in self.attributes:
            if card < 2:
                raise ValueError(f"attribute {name!r} needs cardinality >= 2, got {card}")

    @property
    def num_attributes(self) -> int:
        return len(self.attributes)

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def class_index(self, label: str) -> int:
        try:
            return self.classes.index(label)
        except ValueError:
            raise ValueError(f"unknown class label {label!r}") from None

    def to_json_obj(self) -> dict:
        return {
            "attributes": [[n, c] for n, c in self.attributes],
            "classes": list(self.classes),
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "AttributeSchema":
        return cls(
            attributes=tuple((str(n), int(c)) for n, c in obj["attributes"]),
            classes=tuple(str(c) for c in obj["classes"]),
        )

    def content_hash(self) -> str:
        blob = json.dumps(self.to_json_obj(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class LabeledExample:
    """Feature values by attribute position (None = missing) and a class index."""

    features: tuple
    label: int


@dataclass(frozen=True)
class NbcModel:
    schema: AttributeSchema
    priors: tuple[float, ...]
    # cond[j][c][v] = P(attribute j takes value v | class c)
    cond: tuple[tuple[tuple[float, ...], ...], ...]
    alpha: float

    def __post_init__(self) -> None:
        k = self.schema.num_classes
        if len(self.priors) != k:
            raise ValueError("one prior per class required")
        if abs(sum(self.priors) - 1.0) > 1e-12:
            raise ValueError(f"priors sum to {sum(self.priors)}, not 1")
        if len(self.cond) != self.schema.num_attributes:
            raise ValueError("one conditional table per attribute required")
        for (name, card), table in zip(self.schema.attributes, self.cond):
            if len(table) != k:
                raise ValueError(f"table for {name!r} needs {k} class rows")
            for c, row in enumerate(table):
                if len(row) != card:
                    raise ValueError(f"table row {name!r}/class {c} has wrong width")
                total = sum(row)
                if abs(total - 1.0) > 1e-12:
                    raise ValueError(f"table row {name!r}/class {c} sums to {total}, not 1")
                if self.alpha > 0 and any(p <= 0.0 for p in row):
                    raise ValueError(f"smoothed row {name!r}/class {c} contains a non-positive entry")


def _validate_example(ex: LabeledExample, schema: AttributeSchema) -> None:
    if not 0 <= ex.label < schema.num_classes:
        raise TrainingError(f"label {ex.label} outside 0..{schema.num_classes - 1}")
    if len(ex.features) != schema.num_attributes:
        raise TrainingError(
            f"example has {len(ex.features)} features, schema has {schema.num_attributes}"
        )
    for (name, card), v in zip(schema.attributes, ex.features):
        if v is None:
            continue
        if not 0 <= v < card:
            raise TrainingError(f"value {v} outside 0..{card - 1} for attribute {name!r}")


def train(dataset: Sequence[LabeledExample], schema: AttributeSchema, alpha: float = 1.0) -> NbcModel:
    """Count-based estimation with pseudo-count ``alpha`` per cell.

    priors[c] = (count(c) + alpha) / (N + alpha*|C|); conditional rows
    are smoothed the same way over each attribute's cardinality.
    Missing feature values are excluded from the counts, so each (class,
    attribute) row normalizes over the examples that observed it.
    """
    if not dataset:
        raise TrainingError("empty training set")
    if alpha < 0:
        raise TrainingError(f"alpha must be >= 0, got {alpha}")
    k = schema.num_classes
    for ex in dataset:
        _validate_example(ex, schema)

    n = len(dataset)
    class_counts = [0] * k
    # value_counts[j][c][v]; observed[j][c] = sum over v
    value_counts = [[[0] * card for _ in range(k)] for _, card in schema.attributes]
    for ex in dataset:
        class_counts[ex.label] += 1
        for j, v in enumerate(ex.features):
            if v is not None:
                value_counts[j][ex.label][v] += 1

    priors = tuple((class_counts[c] + alpha) / (n + alpha * k) for c in range(k))

    cond = []
    for j, (name, card) in enumerate(schema.attributes):
        rows = []
        for c in range(k):
            observed = sum(value_counts[j][c])
            denom = observed + alpha * card
            if denom == 0:
                # alpha=0 and this class never observed attribute j: no
                # information at all, fall back to uniform.
                warnings.warn(
                    f"no observations for attribute {name!r} under class "
                    f"{schema.classes[c]!r} with alpha=0; using uniform row"
                )
                rows.append(tuple(1.0 / card for _ in range(card)))
            else:
                rows.append(tuple((value_counts[j][c][v] + alpha) / denom for v in range(card)))
        cond.append(tuple(rows))

    return NbcModel(schema=schema, priors=priors, cond=tuple(cond), alpha=alpha)


def _log(p: float) -> float:
    return math.log(p) if p > 0.0 else float("-inf")


def posterior(model: NbcModel, features: Sequence) -> tuple[float, ...]:
    """Normalized class posterior for a (possibly partial) feature vector.

    A class whose prior or any observed conditional is zero gets
    posterior exactly 0; if that happens to every class the query is
    unanswerable and ``AllZeroLikelihoodError`` is raised.
    """
    schema = model.schema
    if len(features) != schema.num_attributes:
        raise ValueError(
            f"expected {schema.num_attributes} features, got {len(features)}"
        )
    observed = []
    for j, v in enumerate(features):
        if v is None:
            continue
        card = schema.attributes[j][1]
        if not 0 <= v < card:
            raise ValueError(f"value {v} outside 0..{card - 1} for attribute {schema.attributes[j][0]!r}")
        observed.append((j, v))
    if not observed:
        return model.priors

    scores = []
    for c in range(schema.num_classes):
        s = _log(model.priors[c])
        for j, v in observed:
            s += _log(model.cond[j][c][v])
        scores.append(s)
    top = max(scores)
    if top == float("-inf"):
        raise AllZeroLikelihoodError("all classes have zero likelihood for these features")
    weights = [math.exp(s - top) for s in scores]
    total = sum(weights)
    return tuple(w / total for w in weights)


def classify(model: NbcModel, features: Sequence) -> int:
    """MAP class index; exact ties go to the lowest class index."""
    post = posterior(model, features)
    best = 0
    for c in range(1, len(post)):
        if post[c] > post[best]:
            best = c
    return best


# -- persistence -----------------------------------------------------

_MODEL_FORMAT = "nbc-model"


def save_model(model: NbcModel, path) -> None:
    doc = {
        "format": _MODEL_FORMAT,
        "version": 1,
        "schema": model.schema.to_json_obj(),
        "schema_sha256": model.schema.content_hash(),
        "alpha": model.alpha,
        "priors": list(model.priors),
        "cond": [[list(row) for row in table] for table in model.cond],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_model(path) -> NbcModel:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != _MODEL_FORMAT:
        raise ModelFormatError(f"not an NBC model document: {path}")
    schema = AttributeSchema.from_json_obj(doc["schema"])
    if schema.content_hash() != doc.get("schema_sha256"):
        raise ModelFormatError("schema content hash mismatch; model file corrupted or edited")
    try:
        return NbcModel(
            schema=schema,
            priors=tuple(float(p) for p in doc["priors"]),
            cond=tuple(
                tuple(tuple(float(p) for p in row) for row in table) for table in doc["cond"]
            ),
            alpha=float(doc["alpha"]),
        )
    except ValueError as exc:
        raise ModelFormatError(f"model invariants violated: {exc}") from exc


# -- training-data CSV ----------------------------------------------
# One column per attribute holding integer value indices (empty cell =
# missing), final column = class label name.  Header row required.


def write_training_csv(dataset: Sequence[LabeledExample], schema: AttributeSchema, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([name for name, _ in schema.attributes] + ["label"])
        for ex in dataset:
            row = ["" if v is None else str(v) for v in ex.features]
            row.append(schema.classes[ex.label])
            writer.writerow(row)


def read_training_csv(path, schema: AttributeSchema) -> list[LabeledExample]:
    expected = [name for name, _ in schema.attributes] + ["label"]
    out = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise TrainingError(f"empty training file: {path}")
        if header != expected:
            raise TrainingError(f"header mismatch: expected {expected}, got {header}")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(expected):
                raise TrainingError(f"line {line_no}: expected {len(expected)} columns")
            features = tuple(None if cell == "" else int(cell) for cell in row[:-1])
            ex = LabeledExample(features=features, label=schema.class_index(row[-1]))
            _validate_example(ex, schema)
            out.append(ex)
    return out


def load_schema(path) -> AttributeSchema:
    with open(path, "r", encoding="utf-8") as fh:
        return AttributeSchema.from_json_obj(json.load(fh))
