"""Seeded synthetic corpus for desk-scale runs and the acceptance suite.

Libraries are planted in a handful of communities.  Each community emits
CVEs as a Poisson process (exponential inter-arrival gaps) and every CVE
affects a few libraries from its community, so co-occurrence edges and
45-day target windows line up with the planted structure.  A small share
of CVEs leaks one library from a foreign community, which creates the
noisy edges that training is supposed to suppress.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

_STEMS = [
    "auth", "net", "img", "xml", "json", "crypto", "sql", "http", "mail",
    "cache", "log", "font", "media", "proto", "zip", "ssl", "ftp", "dns",
    "ldap", "pdf", "rpc", "smtp", "term", "usb", "vid",
]
_SUFFIXES = ["lib", "core", "utils", "d", "kit", "io"]

_TOPIC_POOLS = [
    ["sql", "injection", "query", "database", "parameter", "commands", "execute"],
    ["buffer", "overflow", "memory", "heap", "corruption", "crash", "code"],
    ["cross", "site", "scripting", "xss", "html", "script", "inject"],
    ["denial", "service", "crash", "loop", "resource", "exhaustion", "flood"],
    ["directory", "traversal", "path", "files", "read", "dot", "arbitrary"],
    ["information", "disclosure", "sensitive", "leak", "obtain", "exposure", "data"],
]

_FILLER = [
    "remote", "attackers", "allows", "versions", "before", "crafted",
    "unspecified", "vectors", "issue", "component", "request", "handling",
]

_ACCESS_VECTORS = ["NETWORK", "LOCAL", "ADJACENT_NETWORK"]
_COMPLEXITY = ["LOW", "MEDIUM", "HIGH"]
_AUTH = ["NONE", "SINGLE"]
_SEVERITY = ["LOW", "MEDIUM", "HIGH"]
_IMPACT = ["NONE", "PARTIAL", "COMPLETE"]
_ATTACK_VECTORS = ["NETWORK", "LOCAL", "ADJACENT", "PHYSICAL"]
_CWES = ["CWE-89", "CWE-119", "CWE-79", "CWE-400", "CWE-22", "CWE-200"]


@dataclass
class SynthCorpus:
    feed_entries: list[dict]
    machines: list[tuple[str, str, str]]  # (machine_id, tag, dpkg status text)
    communities: list[list[str]]  # library names per community


def _library_names(rng: np.random.Generator, count: int) -> list[str]:
    names: list[str] = []
    seen = set()
    while len(names) < count:
        stem = _STEMS[int(rng.integers(len(_STEMS)))]
        suffix = _SUFFIXES[int(rng.integers(len(_SUFFIXES)))]
        name = stem + suffix
        if name in seen:
            name = f"{name}{int(rng.integers(2, 10))}"
        if name not in seen:
            seen.add(name)
            names.append(name)
    return names


def _description(rng: np.random.Generator, community: int) -> str:
    pool = _TOPIC_POOLS[community % len(_TOPIC_POOLS)]
    n_topic = int(rng.integers(3, 6))
    n_fill = int(rng.integers(3, 7))
    words = [pool[int(rng.integers(len(pool)))] for _ in range(n_topic)]
    words += [_FILLER[int(rng.integers(len(_FILLER)))] for _ in range(n_fill)]
    order = rng.permutation(len(words))
    return " ".join(words[i] for i in order)


def _biased_choice(rng: np.random.Generator, options: list[str], favored: int) -> str:
    weights = np.ones(len(options))
    weights[favored % len(options)] = 4.0
    return options[int(rng.choice(len(options), p=weights / weights.sum()))]


def generate_corpus(
    seed: int,
    n_libraries: int = 50,
    n_cves: int = 200,
    n_machines: int = 30,
    n_communities: int = 6,
    start: datetime = datetime(2021, 1, 1),
) -> SynthCorpus:
    rng = np.random.default_rng(seed)
    libraries = _library_names(rng, n_libraries)
    versions = {
        name: [f"1.{int(rng.integers(0, 4))}.{j}" for j in range(int(rng.integers(2, 4)))]
        for name in libraries
    }
    communities = [list(libraries[i::n_communities]) for i in range(n_communities)]

    # Per-community Poisson bursts, staggered so that a 45-day window after
    # a CVE lands mostly on its own community's arrivals.  Within a burst
    # the gaps are exponential with a short mean, between bursts the
    # community goes quiet for a full stagger cycle.
    stagger_days = 70.0
    bursts = 3
    cycle_days = stagger_days * n_communities
    per_community = rng.multinomial(n_cves, np.ones(n_communities) / n_communities)
    arrivals: list[tuple[datetime, int]] = []
    for c in range(n_communities):
        counts = rng.multinomial(per_community[c], np.ones(bursts) / bursts)
        for b in range(bursts):
            burst_start = b * cycle_days + c * stagger_days + float(rng.uniform(0, 5))
            offsets = burst_start + np.cumsum(rng.exponential(3.0, size=counts[b]))
            arrivals.extend((start + timedelta(days=float(o)), c) for o in offsets)
    arrivals.sort(key=lambda a: a[0])

    entries: list[dict] = []
    for idx, (published, community) in enumerate(arrivals, start=1):
        members = communities[community]
        n_affected = int(rng.choice([1, 2, 3, 4], p=[0.25, 0.4, 0.25, 0.1]))
        picks = list(rng.choice(len(members), size=min(n_affected, len(members)), replace=False))
        affected_names = [members[i] for i in picks]
        if rng.random() < 0.08:
            foreign = communities[(community + 1) % n_communities]
            affected_names.append(foreign[int(rng.integers(len(foreign)))])
        affected = [
            {"name": name, "version": versions[name][int(rng.integers(len(versions[name])))]}
            for name in sorted(set(affected_names))
        ]
        entry = {
            "id": f"CVE-{published.year}-{idx:04d}",
            "published": published.date().isoformat(),
            "description": "" if rng.random() < 0.08 else _description(rng, community),
            "affected": affected,
            "cvss2": {
                "access_vector": _biased_choice(rng, _ACCESS_VECTORS, community),
                "access_complexity": _biased_choice(rng, _COMPLEXITY, community + 1),
                "authentication": _biased_choice(rng, _AUTH, community),
                "severity": _biased_choice(rng, _SEVERITY, community + 2),
                "user_interaction_required": "true" if rng.random() < 0.3 else "false",
                "confidentiality_impact": _biased_choice(rng, _IMPACT, community),
                "integrity_impact": _biased_choice(rng, _IMPACT, community + 1),
                "availability_impact": _biased_choice(rng, _IMPACT, community + 2),
            },
        }
        if rng.random() < 0.7:
            entry["cvss3"] = {
                "attack_vector": _biased_choice(rng, _ATTACK_VECTORS, community),
                "attack_complexity": _biased_choice(rng, _COMPLEXITY[:2], community),
            }
        if rng.random() < 0.6:
            entry["cwe"] = _CWES[community % len(_CWES)]
        entries.append(entry)

    vulnerable_pairs = sorted(
        {
            (ref["name"], ref["version"])
            for entry in entries
            for ref in entry["affected"]
        }
    )
    by_name: dict[str, list[str]] = {}
    for name, version in vulnerable_pairs:
        by_name.setdefault(name, []).append(version)

    machines: list[tuple[str, str, str]] = []
    n_vuln_tag = (2 * n_machines) // 3
    for m in range(n_machines):
        tag = "vulnerable" if m < n_vuln_tag else "debian"
        community = int(rng.integers(len(communities)))
        members = [n for n in communities[community] if n in by_name]
        extra_comm = communities[(community + 2) % len(communities)]
        members += [n for n in extra_comm if n in by_name][:2]
        want = int(rng.integers(5, 10)) if tag == "vulnerable" else int(rng.integers(2, 5))
        picks = list(
            rng.choice(len(members), size=min(want, len(members)), replace=False)
        )
        stanzas = []
        for i in picks:
            name = members[i]
            version = by_name[name][int(rng.integers(len(by_name[name])))]
            stanzas.append(
                f"Package: {name}\nVersion: {version}\n"
                f"Status: install ok installed\nDescription: {name} runtime\n"
            )
        # clean installs: versions that never appear in a CVE
        for j in range(int(rng.integers(4, 9))):
            name = libraries[int(rng.integers(len(libraries)))]
            stanzas.append(
                f"Package: {name}\nVersion: 9.{j}.0\n"
                f"Status: install ok installed\nDescription: {name} runtime\n"
            )
        if rng.random() < 0.4:
            stanzas.append(
                "Package: obsoletetool\nVersion: 0.1\n"
                "Status: deinstall ok config-files\nDescription: removed package\n"
            )
        machine_id = f"img-{tag}-{m:03d}"
        machines.append((machine_id, tag, "\n".join(stanzas)))

    return SynthCorpus(feed_entries=entries, machines=machines, communities=communities)


def write_corpus(corpus: SynthCorpus, out_dir: str | Path) -> dict[str, int]:
    """Write the feed and per-machine dpkg files under ``out_dir``.

    Layout matches what `vulngraph ingest` expects: ``cves.json`` plus
    ``machines/<tag>/<machine_id>.status``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "cves.json", "w", encoding="utf-8") as fh:
        json.dump(corpus.feed_entries, fh, indent=1, sort_keys=True)
        fh.write("\n")
    for machine_id, tag, text in corpus.machines:
        tag_dir = out / "machines" / tag
        tag_dir.mkdir(parents=True, exist_ok=True)
        (tag_dir / f"{machine_id}.status").write_text(text, encoding="utf-8")
    return {"cves": len(corpus.feed_entries), "machines": len(corpus.machines)}
