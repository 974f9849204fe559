"""Feature encoding: categorical fields to [0,1] ordinals, plus topic features.

Categorical values are mapped to `ordinal_code / (category_count - 1)`
with the codebook fitted over the populate+train corpus.  Fields that can
be absent (the CVSS v3 block, CWE) reserve a dedicated "absent" category
at code 0.  One-hot encoding is available behind a flag for
experimentation but is not used by the shipped presets.
"""

from __future__ import annotations

import csv
import logging
import re
from dataclasses import dataclass, field
from datetime import datetime

from .errors import ParameterError
from .records import CVSS2_FIELDS, CVSS3_FIELDS, CveRecord

log = logging.getLogger(__name__)

ABSENT = "absent"

# Fixed 50-word English stopword list. Frozen: changing it changes every
# fitted topic model, so treat edits as a model-breaking change.
STOPWORDS = frozenset(
    {
        "a", "an", "and", "are", "as", "at", "be", "been", "but", "by",
        "can", "could", "do", "does", "for", "from", "had", "has", "have",
        "if", "in", "into", "is", "it", "its", "may", "might", "not", "of",
        "on", "or", "so", "such", "that", "the", "their", "them", "then",
        "there", "these", "they", "this", "those", "to", "via", "was",
        "were", "when", "which", "with",
    }
)

_TOKEN_SPLIT = re.compile(r"[^a-z0-9]+")


def tokenize(description: str) -> list[str]:
    """Lowercase, split on non-alphanumerics, drop short tokens and stopwords."""
    tokens = _TOKEN_SPLIT.split(description.lower())
    return [t for t in tokens if len(t) >= 2 and t not in STOPWORDS]


@dataclass(frozen=True)
class FeatureSetSpec:
    """Which record fields feed the clustering feature vector."""

    id: int
    cvss2_fields: tuple[str, ...]
    cvss3_fields: tuple[str, ...] = ()
    include_cwe: bool = False
    use_topic_model: bool = True

    def __post_init__(self):
        for name in self.cvss2_fields:
            if name not in CVSS2_FIELDS:
                raise ParameterError(f"unknown cvss2 field {name!r}")
        for name in self.cvss3_fields:
            if name not in CVSS3_FIELDS:
                raise ParameterError(f"unknown cvss3 field {name!r}")
        if not (self.cvss2_fields or self.cvss3_fields or self.include_cwe):
            raise ParameterError("feature set selects no fields")

    def field_names(self) -> list[str]:
        names = [f"cvss2.{f}" for f in self.cvss2_fields]
        names += [f"cvss3.{f}" for f in self.cvss3_fields]
        if self.include_cwe:
            names.append("cwe")
        return names


_BASE5 = (
    "access_complexity",
    "access_vector",
    "severity",
    "user_interaction_required",
    "authentication",
)
_IMPACTS = ("integrity_impact", "confidentiality_impact", "availability_impact")
_V3PAIR = ("access_vector", "user_interaction_required", "authentication")

# Seven shipped feature-set presets. 1-4 add topic features, 5-7 repeat
# the categorical selections without them.
FEATURE_SET_PRESETS: dict[int, FeatureSetSpec] = {
    1: FeatureSetSpec(1, _BASE5),
    2: FeatureSetSpec(2, _V3PAIR, cvss3_fields=CVSS3_FIELDS),
    3: FeatureSetSpec(3, _BASE5, include_cwe=True),
    4: FeatureSetSpec(4, _BASE5 + _IMPACTS),
    5: FeatureSetSpec(5, _BASE5, include_cwe=True, use_topic_model=False),
    6: FeatureSetSpec(6, _BASE5 + _IMPACTS, use_topic_model=False),
    7: FeatureSetSpec(7, _V3PAIR, cvss3_fields=CVSS3_FIELDS, use_topic_model=False),
}


def feature_set(spec_id: int) -> FeatureSetSpec:
    try:
        return FEATURE_SET_PRESETS[spec_id]
    except KeyError:
        raise ParameterError(f"feature set id must be 1..7, got {spec_id}") from None


def _field_value(record: CveRecord, name: str) -> str | None:
    """Raw categorical value for a qualified field name, None when absent."""
    if name.startswith("cvss2."):
        return getattr(record.cvss2, name[6:])
    if name.startswith("cvss3."):
        if record.cvss3 is None:
            return None
        return getattr(record.cvss3, name[6:])
    if name == "cwe":
        return record.cwe
    raise ParameterError(f"unknown feature field {name!r}")


def _is_optional(name: str) -> bool:
    return name.startswith("cvss3.") or name == "cwe"


@dataclass
class CategoricalEncoder:
    """Fitted codebook: per field, category list in encoding order.

    The "absent" sentinel, when needed, always occupies code 0; observed
    categories follow in sorted order.
    """

    codebooks: dict[str, list[str]]
    one_hot: bool = False

    def encode_value(self, field_name: str, value: str | None) -> float:
        book = self.codebooks[field_name]
        if value is None or value not in book:
            if value is not None:
                log.warning(
                    "unknown category %r for %s, encoding as absent", value, field_name
                )
            code = book.index(ABSENT) if ABSENT in book else 0
        else:
            code = book.index(value)
        if len(book) == 1:
            return 0.0
        return code / (len(book) - 1)

    def one_hot_value(self, field_name: str, value: str | None) -> list[float]:
        book = self.codebooks[field_name]
        out = [0.0] * len(book)
        if value is None or value not in book:
            if ABSENT in book:
                out[book.index(ABSENT)] = 1.0
        else:
            out[book.index(value)] = 1.0
        return out

    def to_dict(self) -> dict:
        return {"codebooks": self.codebooks, "one_hot": self.one_hot}

    @classmethod
    def from_dict(cls, payload: dict) -> "CategoricalEncoder":
        return cls(codebooks=dict(payload["codebooks"]), one_hot=payload.get("one_hot", False))


def fit_encoder(
    records: list[CveRecord], spec: FeatureSetSpec, one_hot: bool = False
) -> CategoricalEncoder:
    """Build per-field codebooks from the fitting corpus.

    Category order is alphabetical regardless of record order. A field
    gets the absent sentinel if it is optional by schema or any fitting
    record lacked a value for it.
    """
    codebooks: dict[str, list[str]] = {}
    for name in spec.field_names():
        seen: set[str] = set()
        any_missing = False
        for record in records:
            value = _field_value(record, name)
            if value is None:
                any_missing = True
            else:
                seen.add(value)
        book = sorted(seen)
        if _is_optional(name) or any_missing:
            book = [ABSENT] + book
        codebooks[name] = book
    return CategoricalEncoder(codebooks=codebooks, one_hot=one_hot)


@dataclass
class FeatureVector:
    values: list[float]
    feature_names: list[str]
    cve_id: str
    published: datetime

    def __post_init__(self):
        if len(self.values) != len(self.feature_names):
            raise ParameterError("values and feature_names lengths differ")


def encode_features(
    record: CveRecord,
    spec: FeatureSetSpec,
    encoder: CategoricalEncoder,
    topic_values: list[float] | None = None,
    topic_names: list[str] | None = None,
) -> FeatureVector:
    """Encode one record; topic features, when given, are appended last."""
    values: list[float] = []
    names: list[str] = []
    for name in spec.field_names():
        raw = _field_value(record, name)
        if encoder.one_hot:
            book = encoder.codebooks[name]
            values.extend(encoder.one_hot_value(name, raw))
            names.extend(f"{name}={cat}" for cat in book)
        else:
            values.append(encoder.encode_value(name, raw))
            names.append(name)
    if topic_values is not None:
        values.extend(topic_values)
        names.extend(topic_names or [f"topic_{i}" for i in range(len(topic_values))])
    return FeatureVector(
        values=values, feature_names=names, cve_id=record.id, published=record.published
    )


def export_feature_csv(vectors: list[FeatureVector], path) -> None:
    """Feature matrix as CSV: cve_id column then one column per feature."""
    if not vectors:
        raise ParameterError("no feature vectors to export")
    header = ["cve_id"] + vectors[0].feature_names
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for vec in vectors:
            writer.writerow([vec.cve_id] + [f"{v:.12g}" for v in vec.values])
