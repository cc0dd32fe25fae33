#!/usr/bin/env python3
"""Regenerate the frozen manifest hash the acceptance suite compares against.

Run only when a deliberate behavior change invalidates the old golden:
    python scripts/freeze_golden.py
"""

import sys
import tempfile
from pathlib import Path

from retarget import cli, fixture, pipeline

GOLDEN = Path(__file__).resolve().parent.parent / "tests" / "goldens" / "fixture_manifest.sha256"


def main() -> int:
    work = Path(tempfile.mkdtemp(prefix="retarget_golden_"))
    paths = fixture.write_fixture(work)
    code = cli.main(["run", "--config", paths["config"]])
    if code != 0:
        return code
    digest = pipeline.sha256_file(Path(paths["out"]) / "manifest.txt")
    GOLDEN.parent.mkdir(parents=True, exist_ok=True)
    GOLDEN.write_text(digest + "\n")
    print(f"{digest}  -> {GOLDEN}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
