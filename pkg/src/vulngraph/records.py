"""Domain records and ingestion: CVE feeds, dpkg inventories, matching, splits.

The feed format consumed here is a flat JSON projection of an NVD-style
feed: a top-level array of entries, each with keys ``id``, ``published``
(ISO-8601 date), ``description``, ``affected`` (array of ``{name,
version}``), ``cvss2`` (object of eight categorical fields), ``cvss3``
(optional object) and ``cwe`` (optional string).
"""

from __future__ import annotations

import json
import logging
import random
import re
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone

from .errors import DataError, FeedParseError, SplitError

log = logging.getLogger(__name__)

CVSS2_FIELDS = (
    "access_vector",
    "access_complexity",
    "authentication",
    "severity",
    "user_interaction_required",
    "confidentiality_impact",
    "integrity_impact",
    "availability_impact",
)

CVSS3_FIELDS = ("attack_vector", "attack_complexity")

# populate : train : test proportions of the full record set
SPLIT_RATIOS = (0.5, 0.3, 0.2)


@dataclass(frozen=True)
class LibraryRef:
    """A (name, version) pair naming one concrete library release.

    ``description`` is carried for inventory entries only and is excluded
    from equality: matching is exact on (name, version).
    """

    name: str
    version: str
    description: str | None = field(default=None, compare=False)


@dataclass(frozen=True)
class Cvss2Fields:
    access_vector: str
    access_complexity: str
    authentication: str
    severity: str
    user_interaction_required: str
    confidentiality_impact: str
    integrity_impact: str
    availability_impact: str


@dataclass(frozen=True)
class Cvss3Fields:
    attack_vector: str
    attack_complexity: str


@dataclass
class CveRecord:
    """One vulnerability entry. ``published`` is a naive UTC timestamp."""

    id: str
    published: datetime
    description: str
    affected: list[LibraryRef]
    cvss2: Cvss2Fields
    cvss3: Cvss3Fields | None = None
    cwe: str | None = None


@dataclass
class MachineInventory:
    """Installed-library listing extracted from one machine image."""

    machine_id: str
    tag: str
    installed: list[LibraryRef]


@dataclass
class DatasetSplit:
    """Disjoint populate/train/test partition of a CVE set."""

    populate: list[CveRecord]
    train: list[CveRecord]
    test: list[CveRecord]

    def part_ids(self) -> dict[str, list[str]]:
        return {
            "populate": [r.id for r in self.populate],
            "train": [r.id for r in self.train],
            "test": [r.id for r in self.test],
        }


def parse_timestamp(value: str) -> datetime:
    """Parse an ISO-8601 date or datetime into a naive UTC datetime."""
    text = value.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is not None:
        ts = ts.astimezone(timezone.utc).replace(tzinfo=None)
    return ts


def format_timestamp(ts: datetime) -> str:
    if (ts.hour, ts.minute, ts.second, ts.microsecond) == (0, 0, 0, 0):
        return ts.date().isoformat()
    return ts.isoformat()


def _parse_entry(entry: dict) -> CveRecord:
    cve_id = entry.get("id")
    if not isinstance(cve_id, str) or not cve_id:
        raise DataError("entry has no usable id")
    published_raw = entry.get("published")
    if not isinstance(published_raw, str):
        raise DataError(f"{cve_id}: missing or non-string published field")
    try:
        published = parse_timestamp(published_raw)
    except ValueError as exc:
        raise DataError(f"{cve_id}: bad published timestamp: {exc}") from exc

    affected = []
    for ref in entry.get("affected", []):
        if not isinstance(ref, dict):
            raise DataError(f"{cve_id}: affected entry is not an object")
        name = ref.get("name")
        version = ref.get("version")
        if not isinstance(name, str) or not name or not isinstance(version, str):
            raise DataError(f"{cve_id}: affected entry missing name or version")
        affected.append(LibraryRef(name=name.lower(), version=version))

    cvss2_raw = entry.get("cvss2")
    if not isinstance(cvss2_raw, dict):
        raise DataError(f"{cve_id}: missing cvss2 block")
    cvss2 = Cvss2Fields(**{f: str(cvss2_raw.get(f, "")) for f in CVSS2_FIELDS})

    cvss3 = None
    cvss3_raw = entry.get("cvss3")
    if isinstance(cvss3_raw, dict):
        cvss3 = Cvss3Fields(**{f: str(cvss3_raw.get(f, "")) for f in CVSS3_FIELDS})

    cwe = entry.get("cwe")
    if cwe is not None and not isinstance(cwe, str):
        raise DataError(f"{cve_id}: cwe must be a string")

    return CveRecord(
        id=cve_id,
        published=published,
        description=str(entry.get("description", "")),
        affected=affected,
        cvss2=cvss2,
        cvss3=cvss3,
        cwe=cwe,
    )


def parse_cve_feed(data: bytes) -> list[CveRecord]:
    """Parse one feed into records.

    Malformed entries are skipped and counted in a log warning; a
    duplicate id within the feed keeps the last occurrence.  Content that
    is not a JSON array raises :class:`FeedParseError` with the byte
    offset of the failure.
    """
    try:
        payload = json.loads(data.decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise FeedParseError("feed is not valid UTF-8", offset=exc.start) from exc
    except json.JSONDecodeError as exc:
        raise FeedParseError(f"feed is not valid JSON: {exc.msg}", offset=exc.pos) from exc
    if not isinstance(payload, list):
        raise FeedParseError("feed top level must be an array", offset=0)

    by_id: dict[str, CveRecord] = {}
    skipped = 0
    for entry in payload:
        try:
            if not isinstance(entry, dict):
                raise DataError("entry is not an object")
            record = _parse_entry(entry)
        except DataError as exc:
            skipped += 1
            log.warning("skipping malformed feed entry: %s", exc)
            continue
        if record.id in by_id:
            log.warning("duplicate id %s in feed, keeping last occurrence", record.id)
        by_id[record.id] = record
    if skipped:
        log.warning("skipped %d malformed feed entries", skipped)
    return list(by_id.values())


def record_to_dict(record: CveRecord) -> dict:
    """Serialize a record back into the feed entry schema."""
    entry: dict = {
        "id": record.id,
        "published": format_timestamp(record.published),
        "description": record.description,
        "affected": [{"name": r.name, "version": r.version} for r in record.affected],
        "cvss2": {f: getattr(record.cvss2, f) for f in CVSS2_FIELDS},
    }
    if record.cvss3 is not None:
        entry["cvss3"] = {f: getattr(record.cvss3, f) for f in CVSS3_FIELDS}
    if record.cwe is not None:
        entry["cwe"] = record.cwe
    return entry


def merge_records(*sources: list[CveRecord]) -> list[CveRecord]:
    """Merge feeds from several sources by CVE id.

    Later sources win field by field, except that an absent optional field
    never erases an earlier value and the newest published timestamp is
    always retained.  Result is sorted by id.
    """
    merged: dict[str, CveRecord] = {}
    for source in sources:
        for record in source:
            prev = merged.get(record.id)
            if prev is None:
                merged[record.id] = record
                continue
            merged[record.id] = replace(
                record,
                published=max(prev.published, record.published),
                description=record.description or prev.description,
                affected=record.affected or prev.affected,
                cvss3=record.cvss3 if record.cvss3 is not None else prev.cvss3,
                cwe=record.cwe if record.cwe is not None else prev.cwe,
            )
    return [merged[i] for i in sorted(merged)]


# -- NVD 1.1 file-drop adapter ------------------------------------------------

_CPE23 = re.compile(r"^cpe:2\.3:[aho]:([^:]*):([^:]*):([^:]*):")


def _walk_cpe_nodes(node, pairs):
    for match in node.get("cpe_match", []) or []:
        if not match.get("vulnerable", True):
            continue
        m = _CPE23.match(match.get("cpe23Uri", ""))
        if not m:
            continue
        product, version = m.group(2), m.group(3)
        if product and version not in ("", "*", "-"):
            pairs.add((product, version))
    for child in node.get("children", []) or []:
        _walk_cpe_nodes(child, pairs)


def nvd_feed_to_entries(data: bytes) -> list[dict]:
    """Map a real NVD 1.1 JSON feed onto the simplified entry schema.

    Affected libraries come from vulnerable cpe23Uri matches (product and
    concrete version); CVSS v2/v3 categorical fields and the first CWE id
    are lifted from the impact and problemtype blocks.
    """
    try:
        payload = json.loads(data.decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise FeedParseError("NVD feed is not valid UTF-8", offset=exc.start) from exc
    except json.JSONDecodeError as exc:
        raise FeedParseError(f"NVD feed is not valid JSON: {exc.msg}", offset=exc.pos) from exc
    items = payload.get("CVE_Items") if isinstance(payload, dict) else None
    if not isinstance(items, list):
        raise FeedParseError("NVD feed has no CVE_Items array", offset=0)

    entries = []
    for item in items:
        cve = item.get("cve", {})
        entry: dict = {
            "id": cve.get("CVE_data_meta", {}).get("ID"),
            "published": (item.get("publishedDate") or "").split("T")[0],
        }
        descriptions = cve.get("description", {}).get("description_data", [])
        english = [d.get("value", "") for d in descriptions if d.get("lang") == "en"]
        entry["description"] = english[0] if english else (
            descriptions[0].get("value", "") if descriptions else ""
        )

        pairs: set[tuple[str, str]] = set()
        for node in item.get("configurations", {}).get("nodes", []) or []:
            _walk_cpe_nodes(node, pairs)
        entry["affected"] = [
            {"name": name, "version": version} for name, version in sorted(pairs)
        ]

        base2 = item.get("impact", {}).get("baseMetricV2", {})
        cvss2 = base2.get("cvssV2", {})
        uir = base2.get("userInteractionRequired")
        entry["cvss2"] = {
            "access_vector": cvss2.get("accessVector", ""),
            "access_complexity": cvss2.get("accessComplexity", ""),
            "authentication": cvss2.get("authentication", ""),
            "severity": base2.get("severity", ""),
            "user_interaction_required": "" if uir is None else str(bool(uir)).lower(),
            "confidentiality_impact": cvss2.get("confidentialityImpact", ""),
            "integrity_impact": cvss2.get("integrityImpact", ""),
            "availability_impact": cvss2.get("availabilityImpact", ""),
        }
        cvss3 = item.get("impact", {}).get("baseMetricV3", {}).get("cvssV3")
        if cvss3:
            entry["cvss3"] = {
                "attack_vector": cvss3.get("attackVector", ""),
                "attack_complexity": cvss3.get("attackComplexity", ""),
            }
        for ptype in cve.get("problemtype", {}).get("problemtype_data", []) or []:
            cwes = [
                d.get("value")
                for d in ptype.get("description", []) or []
                if str(d.get("value", "")).startswith("CWE-")
            ]
            if cwes:
                entry["cwe"] = cwes[0]
                break
        entries.append(entry)
    return entries


def parse_nvd_feed(data: bytes) -> list[CveRecord]:
    """Adapter path: NVD 1.1 feed -> simplified entries -> records."""
    return parse_cve_feed(json.dumps(nvd_feed_to_entries(data)).encode("utf-8"))


_STANZA_LINE = re.compile(r"^([A-Za-z][A-Za-z0-9-]*):\s?(.*)$")


def _iter_stanzas(text: str):
    stanza: dict[str, str] = {}
    last_key = None
    for line in text.splitlines():
        if not line.strip():
            if stanza:
                yield stanza
            stanza, last_key = {}, None
            continue
        if line[0] in " \t" and last_key is not None:
            # continuation line of a multi-line value (e.g. Description)
            stanza[last_key] += "\n" + line.strip()
            continue
        m = _STANZA_LINE.match(line)
        if m:
            last_key = m.group(1)
            stanza[last_key] = m.group(2)
    if stanza:
        yield stanza


def parse_dpkg_status(text: str, machine_id: str, tag: str) -> MachineInventory:
    """Parse a dpkg status file into a machine inventory.

    A stanza contributes one installed library iff its Status value ends
    with "installed".  Installed stanzas missing Package or Version are
    skipped with a warning.
    """
    installed = []
    for stanza in _iter_stanzas(text):
        status = stanza.get("Status", "")
        if not status.endswith("installed"):
            continue
        name = stanza.get("Package")
        version = stanza.get("Version")
        if not name or not version:
            log.warning(
                "%s: skipping installed stanza missing Package or Version", machine_id
            )
            continue
        installed.append(
            LibraryRef(
                name=name.lower(),
                version=version,
                description=stanza.get("Description"),
            )
        )
    return MachineInventory(machine_id=machine_id, tag=tag, installed=installed)


def build_cve_index(records: list[CveRecord]) -> dict[str, dict[str, set[str]]]:
    """name -> version -> set of CVE ids affecting that exact release."""
    index: dict[str, dict[str, set[str]]] = {}
    for record in records:
        for ref in record.affected:
            index.setdefault(ref.name, {}).setdefault(ref.version, set()).add(record.id)
    return index


def match_vulnerable(
    inventory: MachineInventory, cve_index: dict[str, dict[str, set[str]]]
) -> list[tuple[LibraryRef, list[str]]]:
    """Flag installed libraries whose exact (name, version) occurs in a CVE.

    Returns (library, sorted matching CVE ids) pairs, ordered by
    (name, version).  Duplicated installs collapse to one result entry.
    """
    hits: dict[tuple[str, str], tuple[LibraryRef, set[str]]] = {}
    for ref in inventory.installed:
        ids = cve_index.get(ref.name, {}).get(ref.version)
        if not ids:
            continue
        key = (ref.name, ref.version)
        if key in hits:
            hits[key][1].update(ids)
        else:
            hits[key] = (ref, set(ids))
    return [(hits[k][0], sorted(hits[k][1])) for k in sorted(hits)]


def _rounded(x: float) -> int:
    # round-half-up, independent of banker's rounding
    return int(x + 0.5)


def split_dataset(records: list[CveRecord], seed: int) -> DatasetSplit:
    """Split records into populate/train/test at 50:30:20.

    Ids are ordered by publication date, shuffled with a seeded RNG, and
    cut at the rounded ratio boundaries, so the same (records, seed) pair
    always produces the same partition.
    """
    if len(records) < 3:
        raise SplitError(f"need at least 3 records to split, got {len(records)}")
    ordered = sorted(records, key=lambda r: (r.published, r.id))
    rng = random.Random(seed)
    rng.shuffle(ordered)
    n = len(ordered)
    n_populate = _rounded(SPLIT_RATIOS[0] * n)
    n_train = _rounded(SPLIT_RATIOS[1] * n)
    return DatasetSplit(
        populate=ordered[:n_populate],
        train=ordered[n_populate : n_populate + n_train],
        test=ordered[n_populate + n_train :],
    )
