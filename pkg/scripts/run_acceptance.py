"""Run the acceptance suite and print one line per criterion.

    python scripts/run_acceptance.py            # all ten, several minutes
    python scripts/run_acceptance.py --fast     # skip the multi-seed runs
"""

import argparse
import subprocess
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def main() -> int:
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--fast", action="store_true", help="skip criteria marked slow")
    a = p.parse_args()
    cmd = [sys.executable, "-m", "pytest", str(ROOT / "tests" / "test_acceptance.py"), "-q", "-rN"]
    if a.fast:
        cmd += ["-m", "not slow"]
    return subprocess.call(cmd, cwd=ROOT)


if __name__ == "__main__":
    sys.exit(main())
