#!/usr/bin/env python3
"""Check that each test file is marked for the suite its directory belongs to."""

import re
import sys
from pathlib import Path

SUITE_MARKERS = {"unit": "unit", "cli": "cli", "integration": "integration"}
MARKER_PATTERN = re.compile(r"pytest\.mark\.(\w+)")


def file_markers(path: Path) -> set:
    """Markers named on the pytestmark line(s) of a test module."""
    text = path.read_text(encoding="utf-8")
    match = re.search(r"^pytestmark\s*=\s*(\[.*?\]|.+?)$", text, re.MULTILINE | re.DOTALL)
    if not match:
        return set()
    return set(MARKER_PATTERN.findall(match.group(1)))


def unscoped_fixtures(conftest: Path) -> list:
    """Fixture names in conftest.py declared without an explicit scope."""
    text = conftest.read_text(encoding="utf-8")
    pattern = re.compile(r"@pytest\.fixture(\((?P<args>[^)]*)\))?\s*\ndef (?P<name>\w+)")
    return [m.group("name") for m in pattern.finditer(text) if "scope=" not in (m.group("args") or "")]


def main() -> int:
    failures = 0
    print("\nPYTEST MARKER VERIFICATION")
    print("=" * 70)
    for suite, marker in SUITE_MARKERS.items():
        files = sorted(Path("tests", suite).glob("test_*.py"))
        print(f"\n{suite.upper()} ({len(files)} files, expecting pytest.mark.{marker}):")
        for path in files:
            markers = file_markers(path)
            ok = marker in markers
            failures += not ok
            print(f"{'[OK]' if ok else '[FAIL]'} {str(path):<50} {', '.join(sorted(markers)) or '-'}")

    print("\nFIXTURE SCOPES (tests/conftest.py)")
    print("-" * 70)
    missing = unscoped_fixtures(Path("tests/conftest.py"))
    for name in missing:
        print(f"[FAIL] fixture '{name}' has no explicit scope")
    if not missing:
        print("[OK] every fixture declares its scope")
    failures += len(missing)

    print("\n" + "=" * 70)
    print("[OK] All checks passed" if failures == 0 else f"[FAIL] {failures} problems found")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
