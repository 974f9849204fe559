"""Feed parsing, dpkg parsing, vulnerable-library matching and splits."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vulngraph.errors import FeedParseError, SplitError
from vulngraph.records import (
    LibraryRef,
    MachineInventory,
    build_cve_index,
    match_vulnerable,
    merge_records,
    parse_cve_feed,
    parse_dpkg_status,
    record_to_dict,
    split_dataset,
)

from conftest import feed_bytes, feed_entry, make_record


class TestParseCveFeed:
    def test_single_entry_two_libraries(self):
        data = feed_bytes(
            [feed_entry(affected=(("openssl", "1.0.1"), ("zlib", "1.2.8")))]
        )
        records = parse_cve_feed(data)
        assert len(records) == 1
        assert len(records[0].affected) == 2

    def test_missing_cvss3_block(self):
        records = parse_cve_feed(feed_bytes([feed_entry()]))
        assert records[0].cvss3 is None

    def test_cvss3_block_parsed(self):
        entry = feed_entry(cvss3={"attack_vector": "NETWORK", "attack_complexity": "LOW"})
        records = parse_cve_feed(feed_bytes([entry]))
        assert records[0].cvss3.attack_vector == "NETWORK"

    def test_entry_missing_published_skipped(self, caplog):
        entries = [
            feed_entry(cve_id="CVE-2019-0001"),
            feed_entry(cve_id="CVE-2019-0002"),
            feed_entry(cve_id="CVE-2019-0003"),
        ]
        del entries[1]["published"]
        records = parse_cve_feed(feed_bytes(entries))
        assert [r.id for r in records] == ["CVE-2019-0001", "CVE-2019-0003"]

    def test_duplicate_id_last_wins(self):
        entries = [
            feed_entry(description="first"),
            feed_entry(description="second"),
        ]
        records = parse_cve_feed(feed_bytes(entries))
        assert len(records) == 1
        assert records[0].description == "second"

    def test_unreadable_content_reports_offset(self):
        with pytest.raises(FeedParseError) as exc:
            parse_cve_feed(b'[{"id": "CVE-2019-0001", }]')
        assert exc.value.offset is not None
        assert "byte offset" in str(exc.value)

    def test_non_array_top_level_rejected(self):
        with pytest.raises(FeedParseError):
            parse_cve_feed(b'{"id": "CVE-2019-0001"}')

    def test_names_lowercased(self):
        records = parse_cve_feed(feed_bytes([feed_entry(affected=(("OpenSSL", "1.0.1"),))]))
        assert records[0].affected[0].name == "openssl"

    def test_round_trip(self):
        entry = feed_entry(
            cvss3={"attack_vector": "LOCAL", "attack_complexity": "HIGH"},
            cwe="CWE-89",
            affected=(("openssl", "1.0.1"), ("zlib", "1.2.8")),
        )
        first = parse_cve_feed(feed_bytes([entry]))[0]
        second = parse_cve_feed(feed_bytes([record_to_dict(first)]))[0]
        assert first == second

    @given(
        description=st.text(max_size=40),
        cwe=st.one_of(st.none(), st.sampled_from(["CWE-79", "CWE-89"])),
        affected=st.lists(
            st.tuples(
                st.text(alphabet="abcxyz", min_size=1, max_size=6),
                st.sampled_from(["1.0", "2.3.4"]),
            ),
            min_size=1,
            max_size=4,
        ),
    )
    @settings(max_examples=50, deadline=None)
    def test_round_trip_property(self, description, cwe, affected):
        entry = feed_entry(description=description, cwe=cwe, affected=tuple(affected))
        first = parse_cve_feed(feed_bytes([entry]))[0]
        second = parse_cve_feed(feed_bytes([record_to_dict(first)]))[0]
        assert first == second


class TestMergeRecords:
    def test_later_source_wins_fields(self):
        a = make_record(description="old", published="2020-01-01")
        b = make_record(description="new", published="2020-01-05")
        merged = merge_records([a], [b])
        assert merged[0].description == "new"
        assert merged[0].published == b.published

    def test_absent_optional_does_not_erase(self):
        a = make_record(cwe="CWE-89", cvss3={"attack_vector": "NETWORK", "attack_complexity": "LOW"})
        b = make_record()
        merged = merge_records([a], [b])
        assert merged[0].cwe == "CWE-89"
        assert merged[0].cvss3 is not None

    def test_newest_published_retained(self):
        a = make_record(published="2020-06-01")
        b = make_record(published="2020-01-01")
        merged = merge_records([a], [b])
        assert merged[0].published == a.published

    def test_distinct_ids_pass_through(self):
        a = make_record(cve_id="CVE-2020-0001")
        b = make_record(cve_id="CVE-2020-0002")
        assert len(merge_records([a], [b])) == 2


NVD_ITEM = {
    "cve": {
        "CVE_data_meta": {"ID": "CVE-2014-0160"},
        "problemtype": {
            "problemtype_data": [{"description": [{"lang": "en", "value": "CWE-119"}]}]
        },
        "description": {
            "description_data": [
                {"lang": "en", "value": "Heartbeat read overrun in OpenSSL"}
            ]
        },
    },
    "configurations": {
        "nodes": [
            {
                "cpe_match": [
                    {"vulnerable": True, "cpe23Uri": "cpe:2.3:a:openssl:openssl:1.0.1:*:*:*:*:*:*:*"},
                    {"vulnerable": True, "cpe23Uri": "cpe:2.3:a:openssl:openssl:*:*:*:*:*:*:*:*"},
                    {"vulnerable": False, "cpe23Uri": "cpe:2.3:a:openssl:openssl:1.0.2:*:*:*:*:*:*:*"},
                ],
                "children": [
                    {
                        "cpe_match": [
                            {"vulnerable": True, "cpe23Uri": "cpe:2.3:o:debian:debian_linux:7.0:*:*:*:*:*:*:*"}
                        ]
                    }
                ],
            }
        ]
    },
    "impact": {
        "baseMetricV2": {
            "cvssV2": {
                "accessVector": "NETWORK",
                "accessComplexity": "LOW",
                "authentication": "NONE",
                "confidentialityImpact": "PARTIAL",
                "integrityImpact": "NONE",
                "availabilityImpact": "NONE",
            },
            "severity": "MEDIUM",
            "userInteractionRequired": False,
        },
        "baseMetricV3": {
            "cvssV3": {"attackVector": "NETWORK", "attackComplexity": "LOW"}
        },
    },
    "publishedDate": "2014-04-07T22:55Z",
}


class TestNvdAdapter:
    def _feed(self, items):
        import json as jsonlib

        return jsonlib.dumps({"CVE_Data_Type": "CVE", "CVE_Items": items}).encode()

    def test_maps_real_item_onto_schema(self):
        from vulngraph.records import parse_nvd_feed

        records = parse_nvd_feed(self._feed([NVD_ITEM]))
        assert len(records) == 1
        record = records[0]
        assert record.id == "CVE-2014-0160"
        assert record.published.date().isoformat() == "2014-04-07"
        # only vulnerable matches with concrete versions survive
        assert {(r.name, r.version) for r in record.affected} == {
            ("openssl", "1.0.1"),
            ("debian_linux", "7.0"),
        }
        assert record.cvss2.access_vector == "NETWORK"
        assert record.cvss2.severity == "MEDIUM"
        assert record.cvss2.user_interaction_required == "false"
        assert record.cvss3.attack_vector == "NETWORK"
        assert record.cwe == "CWE-119"

    def test_item_without_impact_blocks(self):
        from vulngraph.records import parse_nvd_feed

        item = {
            "cve": {
                "CVE_data_meta": {"ID": "CVE-1999-0001"},
                "description": {"description_data": []},
            },
            "publishedDate": "1999-12-30T05:00Z",
        }
        records = parse_nvd_feed(self._feed([item]))
        assert records[0].cvss3 is None
        assert records[0].cwe is None
        assert records[0].affected == []

    def test_non_nvd_payload_rejected(self):
        from vulngraph.records import parse_nvd_feed

        with pytest.raises(FeedParseError):
            parse_nvd_feed(b'{"something": []}')


DPKG_INSTALLED = """\
Package: openssl
Version: 1.1.1d
Status: install ok installed
Description: Secure Sockets Layer toolkit
"""


class TestParseDpkgStatus:
    def test_installed_stanza(self):
        inv = parse_dpkg_status(DPKG_INSTALLED, "m1", "vulnerable")
        assert inv.installed == [LibraryRef("openssl", "1.1.1d")]

    def test_removed_stanza_omitted(self):
        text = "Package: old\nVersion: 1.0\nStatus: deinstall ok config-files\n"
        inv = parse_dpkg_status(text, "m1", "vulnerable")
        assert inv.installed == []

    def test_mixed_file_counts(self):
        stanzas = [
            f"Package: pkg{i}\nVersion: 1.{i}\nStatus: install ok installed\n"
            for i in range(3)
        ]
        stanzas.append("Package: gone\nVersion: 0.9\nStatus: deinstall ok config-files\n")
        inv = parse_dpkg_status("\n".join(stanzas), "m1", "debian")
        assert len(inv.installed) == 3

    def test_installed_stanza_missing_version_skipped(self, caplog):
        text = "Package: broken\nStatus: install ok installed\n"
        inv = parse_dpkg_status(text, "m1", "vulnerable")
        assert inv.installed == []

    def test_multiline_description_continuation(self):
        text = (
            "Package: openssl\nVersion: 1.1.1d\nStatus: install ok installed\n"
            "Description: toolkit\n with a continuation line\n"
        )
        inv = parse_dpkg_status(text, "m1", "vulnerable")
        assert inv.installed[0].name == "openssl"
        assert "continuation" in inv.installed[0].description

    def test_names_lowercased(self):
        text = "Package: OpenSSL\nVersion: 1.1.1d\nStatus: install ok installed\n"
        inv = parse_dpkg_status(text, "m1", "vulnerable")
        assert inv.installed[0].name == "openssl"


class TestMatchVulnerable:
    def _index(self):
        return build_cve_index(
            [make_record(cve_id="CVE-2014-0160", affected=(("openssl", "1.0.1"),))]
        )

    def test_exact_match(self):
        inv = MachineInventory("m1", "vulnerable", [LibraryRef("openssl", "1.0.1")])
        matches = match_vulnerable(inv, self._index())
        assert len(matches) == 1
        assert matches[0][1] == ["CVE-2014-0160"]

    def test_version_mismatch(self):
        inv = MachineInventory("m1", "vulnerable", [LibraryRef("openssl", "1.0.2")])
        assert match_vulnerable(inv, self._index()) == []

    def test_empty_inventory(self):
        inv = MachineInventory("m1", "vulnerable", [])
        assert match_vulnerable(inv, self._index()) == []

    def test_equivalent_to_brute_force(self, corpus_records, corpus_machines):
        index = build_cve_index(corpus_records)
        for inventory in corpus_machines:
            got = {
                (ref.name, ref.version): set(ids)
                for ref, ids in match_vulnerable(inventory, index)
            }
            expected: dict = {}
            for ref in inventory.installed:
                for record in corpus_records:
                    for aff in record.affected:
                        if (aff.name, aff.version) == (ref.name, ref.version):
                            expected.setdefault((ref.name, ref.version), set()).add(record.id)
            assert got == expected


class TestSplitDataset:
    def _records(self, n):
        return [
            make_record(cve_id=f"CVE-2020-{i:04d}", published=f"2020-01-{(i % 28) + 1:02d}")
            for i in range(n)
        ]

    def test_hundred_records(self):
        split = split_dataset(self._records(100), seed=1)
        assert (len(split.populate), len(split.train), len(split.test)) == (50, 30, 20)

    def test_ten_records(self):
        split = split_dataset(self._records(10), seed=1)
        assert (len(split.populate), len(split.train), len(split.test)) == (5, 3, 2)

    def test_deterministic(self):
        records = self._records(40)
        first = split_dataset(records, seed=9)
        second = split_dataset(records, seed=9)
        assert first.part_ids() == second.part_ids()

    def test_too_few_records(self):
        with pytest.raises(SplitError):
            split_dataset(self._records(2), seed=1)

    @given(seed=st.integers(min_value=0, max_value=2**31), n=st.integers(3, 120))
    @settings(max_examples=60, deadline=None)
    def test_partition_property(self, seed, n):
        records = self._records(n)
        split = split_dataset(records, seed)
        ids = [r.id for part in (split.populate, split.train, split.test) for r in part]
        assert len(ids) == n
        assert set(ids) == {r.id for r in records}
        for count, ratio in zip(
            (len(split.populate), len(split.train), len(split.test)), (0.5, 0.3, 0.2)
        ):
            assert abs(count - round(ratio * n)) <= 1


def test_store_has_no_uppercase_names(corpus_records, corpus_machines):
    for record in corpus_records:
        for ref in record.affected:
            assert ref.name == ref.name.lower()
    for inventory in corpus_machines:
        for ref in inventory.installed:
            assert ref.name == ref.name.lower()


def test_store_round_trip(tmp_path, corpus_records, corpus_machines):
    from vulngraph.store import Store

    store = Store(tmp_path / "store")
    store.write_cves(corpus_records)
    store.write_machines(corpus_machines)
    assert sorted(r.id for r in store.read_cves()) == sorted(r.id for r in corpus_records)
    machines = store.read_machines()
    assert {m.machine_id for m in machines} == {m.machine_id for m in corpus_machines}
    reread = {m.machine_id: m.installed for m in machines}
    for inventory in corpus_machines:
        assert reread[inventory.machine_id] == inventory.installed


def test_ingest_idempotent(tmp_path, corpus_records):
    from vulngraph.store import Store

    store = Store(tmp_path / "store")
    store.write_cves(corpus_records)
    first = store.cves_path.read_bytes()
    store.write_cves(store.read_cves())
    assert store.cves_path.read_bytes() == first
