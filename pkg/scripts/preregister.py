"""Compute the values pinned in tests/test_acceptance.py.

Run once from the repository root; paste the printed numbers into the
acceptance suite. The protocols themselves live in tests/protocols.py.
"""

import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "tests"))

import protocols  # noqa: E402


def main():
    t0 = time.perf_counter()
    print("targeting_ratio", repr(protocols.targeting_ratio()))
    for k, v in protocols.meta_recovery().items():
        print("pehe", k, repr(v))
    for k, v in protocols.ipw_margin().items():
        print("ipw", k, repr(v))
    if "--coverage" in sys.argv:
        print("coverage", protocols.coverage())
    print(f"elapsed {time.perf_counter() - t0:.1f}s")


if __name__ == "__main__":
    main()
