"""Run manifests: a reproducibility record written before any result.

The run id is a content hash of everything that determines the outputs
(command, parameters, input digest, tool versions, seed) and deliberately
excludes wall-clock time and output paths, so two runs of the same work
share an id and can produce byte-identical artifacts.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

MANIFEST_NAME = "manifest.json"


def corpus_digest(src_dir: str | Path) -> str:
    """SHA-256 over the sorted relative paths and contents of a source tree."""
    root = Path(src_dir)
    h = hashlib.sha256()
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        h.update(str(path.relative_to(root)).encode())
        h.update(b"\0")
        h.update(path.read_bytes())
        h.update(b"\0")
    return h.hexdigest()


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    h.update(Path(path).read_bytes())
    return h.hexdigest()


@dataclass
class RunManifest:
    run_id: str
    created_utc: str
    command: str
    config: dict
    tool_versions: dict
    input_digest: str
    seed: int

    @classmethod
    def build(
        cls,
        command: str,
        config: dict,
        tool_versions: dict,
        input_digest: str,
        seed: int = 0,
    ) -> "RunManifest":
        core = {
            "command": command,
            "config": config,
            "tool_versions": tool_versions,
            "input_digest": input_digest,
            "seed": seed,
        }
        digest = hashlib.sha256(
            json.dumps(core, sort_keys=True, ensure_ascii=True).encode()
        ).hexdigest()
        return cls(
            run_id=f"r{digest[:12]}",
            created_utc=datetime.now(timezone.utc).isoformat(timespec="seconds"),
            command=command,
            config=config,
            tool_versions=tool_versions,
            input_digest=input_digest,
            seed=seed,
        )

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "created_utc": self.created_utc,
            "command": self.command,
            "config": self.config,
            "tool_versions": self.tool_versions,
            "input_digest": self.input_digest,
            "seed": self.seed,
        }

    def write(self, out_dir: str | Path) -> Path:
        """Write the manifest before any result lands in `out_dir`.

        An existing manifest for a different run id is refused; rewriting
        the same run id is allowed (re-running identical work).
        """
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        path = out / MANIFEST_NAME
        if path.exists():
            existing = json.loads(path.read_text())
            if existing.get("run_id") != self.run_id:
                raise FileExistsError(
                    f"{path} belongs to run {existing.get('run_id')}; refusing to mix runs"
                )
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def read(cls, out_dir: str | Path) -> "RunManifest":
        data = json.loads((Path(out_dir) / MANIFEST_NAME).read_text())
        return cls(**data)
