"""Evaluation manifest: (utt_id, system_id, path, mos) rows in CSV form.

The manifest drives both corpus scoring (paths) and correlation evaluation
(MOS). Paths may be absolute or relative to the manifest file's directory,
and may point at WAV files or precomputed ``.slmf`` feature files.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .errors import InvariantViolation

MANIFEST_FIELDS = ["utt_id", "system_id", "path", "mos"]


@dataclass(frozen=True)
class ManifestRow:
    utt_id: str
    system_id: str
    path: str
    mos: Optional[float] = None

    def __post_init__(self):
        if not self.utt_id:
            raise InvariantViolation("utt_id must be non-empty")
        if self.mos is not None and not (1.0 <= self.mos <= 5.0):
            raise InvariantViolation(
                f"mos {self.mos} for {self.utt_id!r} outside [1, 5]"
            )


class EvalManifest:
    """Ordered rows with unique utterance ids."""

    def __init__(self, rows: list[ManifestRow]):
        seen = set()
        for row in rows:
            if row.utt_id in seen:
                raise InvariantViolation(f"duplicate utt_id {row.utt_id!r}")
            seen.add(row.utt_id)
        self.rows = list(rows)

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def by_utt(self) -> dict[str, ManifestRow]:
        return {row.utt_id: row for row in self.rows}

    def system_ids(self) -> list[str]:
        return sorted({row.system_id for row in self.rows})


def read_manifest(path) -> EvalManifest:
    """Read a manifest CSV; relative paths resolve against the CSV's directory."""
    path = Path(path)
    base = path.parent
    rows = []
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        missing = [f for f in MANIFEST_FIELDS[:3] if f not in (reader.fieldnames or [])]
        if missing:
            raise InvariantViolation(f"{path}: manifest missing columns {missing}")
        for record in reader:
            mos_text = (record.get("mos") or "").strip()
            raw = record["path"].strip()
            resolved = raw if Path(raw).is_absolute() else str(base / raw)
            rows.append(
                ManifestRow(
                    utt_id=record["utt_id"].strip(),
                    system_id=record["system_id"].strip(),
                    path=resolved,
                    mos=float(mos_text) if mos_text else None,
                )
            )
    return EvalManifest(rows)


def write_manifest(manifest: EvalManifest, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(MANIFEST_FIELDS)
        for row in manifest.rows:
            mos = "" if row.mos is None else f"{row.mos:.9g}"
            writer.writerow([row.utt_id, row.system_id, row.path, mos])
