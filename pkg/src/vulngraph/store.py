"""File-backed store: one directory of line-delimited JSON artifacts.

Layout::

    store/
      config                 flat key = value run configuration
      cves.jsonl             one CVE record per line (feed entry schema)
      machines.jsonl         one machine inventory per line
      splits/<seed>.jsonl    one {"id", "part"} line per record
      models/fs<id>/*.json   fitted encoder / topic / pca / kmeans snapshots
      graph/nodes.jsonl      one library node per line
      graph/edges.jsonl      one edge per line
      reports/<preset>/      evaluation report JSON + CSV exports

Writers take an exclusive lock file; readers need no lock.
"""

from __future__ import annotations

import json
import os
from contextlib import contextmanager
from pathlib import Path

from .errors import MissingStageError, StoreLockedError
from .records import (
    CveRecord,
    LibraryRef,
    MachineInventory,
    parse_cve_feed,
    record_to_dict,
)


class Store:
    def __init__(self, root: str | Path):
        self.root = Path(root)

    # -- paths ---------------------------------------------------------

    @property
    def cves_path(self) -> Path:
        return self.root / "cves.jsonl"

    @property
    def machines_path(self) -> Path:
        return self.root / "machines.jsonl"

    def split_path(self, seed: int) -> Path:
        return self.root / "splits" / f"{seed}.jsonl"

    def model_dir(self, feature_set: int) -> Path:
        return self.root / "models" / f"fs{feature_set}"

    @property
    def graph_dir(self) -> Path:
        return self.root / "graph"

    def report_dir(self, preset: str) -> Path:
        return self.root / "reports" / preset

    @property
    def config_path(self) -> Path:
        return self.root / "config"

    # -- locking -------------------------------------------------------

    @contextmanager
    def write_lock(self):
        self.root.mkdir(parents=True, exist_ok=True)
        lock = self.root / ".lock"
        try:
            fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise StoreLockedError(
                f"store {self.root} is locked by another writer ({lock})"
            ) from None
        try:
            os.write(fd, str(os.getpid()).encode())
            os.close(fd)
            yield
        finally:
            lock.unlink(missing_ok=True)

    # -- jsonl helpers ---------------------------------------------------

    @staticmethod
    def _write_jsonl(path: Path, rows) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            for row in rows:
                fh.write(json.dumps(row, sort_keys=True, ensure_ascii=False))
                fh.write("\n")

    @staticmethod
    def _read_jsonl(path: Path) -> list[dict]:
        with open(path, encoding="utf-8") as fh:
            return [json.loads(line) for line in fh if line.strip()]

    # -- CVEs ------------------------------------------------------------

    def write_cves(self, records: list[CveRecord]) -> None:
        rows = [record_to_dict(r) for r in sorted(records, key=lambda r: r.id)]
        self._write_jsonl(self.cves_path, rows)

    def read_cves(self) -> list[CveRecord]:
        if not self.cves_path.exists():
            raise MissingStageError("no CVE store", required_command="ingest")
        data = ("[" + ",".join(self.cves_path.read_text().splitlines()) + "]").encode()
        return parse_cve_feed(data)

    # -- machines ---------------------------------------------------------

    def write_machines(self, inventories: list[MachineInventory]) -> None:
        rows = []
        for inv in sorted(inventories, key=lambda i: i.machine_id):
            rows.append(
                {
                    "machine_id": inv.machine_id,
                    "tag": inv.tag,
                    "installed": [
                        {"name": r.name, "version": r.version, "description": r.description}
                        for r in inv.installed
                    ],
                }
            )
        self._write_jsonl(self.machines_path, rows)

    def read_machines(self) -> list[MachineInventory]:
        if not self.machines_path.exists():
            raise MissingStageError("no machine store", required_command="ingest")
        inventories = []
        for row in self._read_jsonl(self.machines_path):
            installed = [
                LibraryRef(name=r["name"], version=r["version"], description=r.get("description"))
                for r in row["installed"]
            ]
            inventories.append(
                MachineInventory(machine_id=row["machine_id"], tag=row["tag"], installed=installed)
            )
        return inventories

    # -- splits -----------------------------------------------------------

    def write_split(self, seed: int, part_ids: dict[str, list[str]]) -> None:
        rows = [
            {"id": cve_id, "part": part}
            for part in ("populate", "train", "test")
            for cve_id in part_ids[part]
        ]
        self._write_jsonl(self.split_path(seed), rows)

    def read_split_ids(self, seed: int) -> dict[str, list[str]]:
        path = self.split_path(seed)
        if not path.exists():
            raise MissingStageError(
                f"no split for seed {seed}", required_command="split"
            )
        parts: dict[str, list[str]] = {"populate": [], "train": [], "test": []}
        for row in self._read_jsonl(path):
            parts[row["part"]].append(row["id"])
        return parts

    # -- generic json snapshots --------------------------------------------

    def write_json(self, path: Path, payload: dict) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, sort_keys=True, indent=1)
            fh.write("\n")

    def read_json(self, path: Path, stage: str) -> dict:
        if not path.exists():
            raise MissingStageError(f"missing artifact {path}", required_command=stage)
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)

    # -- config -----------------------------------------------------------

    def read_config_file(self) -> dict[str, str]:
        """Flat `key = value` lines; '#' starts a comment."""
        if not self.config_path.exists():
            return {}
        values: dict[str, str] = {}
        for line in self.config_path.read_text().splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
        return values
