"""Shared fixtures: record builders and the staged synthetic corpus."""

import json
from datetime import datetime

import pytest

from vulngraph.records import (
    CveRecord,
    Cvss2Fields,
    Cvss3Fields,
    LibraryRef,
    split_dataset,
)
from vulngraph.synth import generate_corpus

CORPUS_SEED = 42


def make_cvss2(**overrides):
    base = dict(
        access_vector="NETWORK",
        access_complexity="LOW",
        authentication="NONE",
        severity="HIGH",
        user_interaction_required="false",
        confidentiality_impact="PARTIAL",
        integrity_impact="PARTIAL",
        availability_impact="NONE",
    )
    base.update(overrides)
    return Cvss2Fields(**base)


def make_record(
    cve_id="CVE-2020-0001",
    published="2020-01-01",
    description="sql injection in login form",
    affected=(("openssl", "1.0.1"),),
    cvss2=None,
    cvss3=None,
    cwe=None,
):
    return CveRecord(
        id=cve_id,
        published=datetime.fromisoformat(published),
        description=description,
        affected=[LibraryRef(name=n, version=v) for n, v in affected],
        cvss2=cvss2 or make_cvss2(),
        cvss3=Cvss3Fields(**cvss3) if isinstance(cvss3, dict) else cvss3,
        cwe=cwe,
    )


def feed_bytes(entries):
    return json.dumps(entries).encode("utf-8")


def feed_entry(
    cve_id="CVE-2019-0001",
    published="2019-01-01",
    description="a description",
    affected=(("openssl", "1.0.1"),),
    cvss3=None,
    cwe=None,
    **extra,
):
    entry = {
        "id": cve_id,
        "published": published,
        "description": description,
        "affected": [{"name": n, "version": v} for n, v in affected],
        "cvss2": {
            "access_vector": "NETWORK",
            "access_complexity": "LOW",
            "authentication": "NONE",
            "severity": "HIGH",
            "user_interaction_required": "false",
            "confidentiality_impact": "PARTIAL",
            "integrity_impact": "PARTIAL",
            "availability_impact": "NONE",
        },
    }
    if cvss3 is not None:
        entry["cvss3"] = cvss3
    if cwe is not None:
        entry["cwe"] = cwe
    entry.update(extra)
    return entry


@pytest.fixture(scope="session")
def synth_corpus():
    return generate_corpus(seed=CORPUS_SEED)


@pytest.fixture(scope="session")
def corpus_records(synth_corpus):
    from vulngraph.records import parse_cve_feed

    return parse_cve_feed(feed_bytes(synth_corpus.feed_entries))


@pytest.fixture(scope="session")
def corpus_split(corpus_records):
    return split_dataset(corpus_records, CORPUS_SEED)


@pytest.fixture(scope="session")
def corpus_machines(synth_corpus):
    from vulngraph.records import parse_dpkg_status

    return [
        parse_dpkg_status(text, machine_id, tag)
        for machine_id, tag, text in synth_corpus.machines
    ]
