import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

_critlog = []


def criterion_line(num, passed, detail):
    line = f"CRITERION {num:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    _critlog.append(line)
    print("\n" + line)


@pytest.fixture(scope="session", autouse=True)
def _criterion_summary():
    yield
    if _critlog:
        print("\n" + "=" * 72)
        print("acceptance summary")
        for line in sorted(_critlog):
            print("  " + line)
        print("=" * 72)
