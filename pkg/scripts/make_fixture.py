#!/usr/bin/env python3
"""Write the synthetic moving-disk fixture to a directory.

Usage: python scripts/make_fixture.py OUT_DIR [SEED]
"""

import sys

from retarget import fixture


def main() -> int:
    if len(sys.argv) < 2:
        print(__doc__.strip(), file=sys.stderr)
        return 2
    seed = int(sys.argv[2]) if len(sys.argv) > 2 else 0
    paths = fixture.write_fixture(sys.argv[1], seed=seed)
    print(paths["config"])
    return 0


if __name__ == "__main__":
    sys.exit(main())
