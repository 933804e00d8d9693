"""Run every acceptance criterion, slow ones included, and print the verdict lines.

Pass ``--fast`` to skip the slow statistical runs.
"""
import sys

import pytest

if __name__ == "__main__":
    args = ["tests/test_acceptance.py", "-q", "-rA"]
    if "--fast" in sys.argv[1:]:
        args += ["-m", "not slow"]
    sys.exit(pytest.main(args))
