"""
Run one test suite and turn its results into an Allure report.

Usage:
    python run_tests_with_report.py                  # unit, cli and integration
    python run_tests_with_report.py unit             # fast unit tests
    python run_tests_with_report.py cli --no-open    # command tests, report left on disk
"""

import argparse
import os
import platform
import shutil
import subprocess
import sys
from datetime import datetime
from importlib import metadata
from pathlib import Path

RESULTS = Path("allure-results")
REPORT = Path("allure-report")
SUITES = {
    "all": ["tests/unit/", "tests/cli/", "tests/integration/"],
    "unit": ["tests/unit/"],
    "cli": ["tests/cli/"],
    "integration": ["tests/integration/"],
}
REPORTED_PACKAGES = ("numpy", "scipy", "torch", "scikit-image", "scikit-learn", "pydantic")


def package_version(name: str) -> str:
    try:
        return metadata.version(name)
    except metadata.PackageNotFoundError:
        return "missing"


def pytest_command(suite: str) -> list:
    """pytest argv for a suite; the full run also measures coverage."""
    cmd = ["pytest", *SUITES[suite], "--alluredir", str(RESULTS)]
    if suite == "all":
        cmd += ["--cov=src", "--cov-report=term-missing"]
    return cmd


def write_environment() -> None:
    """Versions and thread settings shown on the report's overview page."""
    RESULTS.mkdir(exist_ok=True)
    lines = [
        f"Python={platform.python_version()}",
        f"Platform={platform.system()} {platform.release()}",
        f"FPS_THREADS={os.environ.get('FPS_THREADS', '0')}",
        f"FPS_DTYPE={os.environ.get('FPS_DTYPE', 'float32')}",
        f"Run.Date={datetime.now():%Y-%m-%d %H:%M:%S}",
    ]
    lines += [f"{name}={package_version(name)}" for name in REPORTED_PACKAGES]
    (RESULTS / "environment.properties").write_text("\n".join(lines) + "\n", encoding="utf-8")


def build_report(serve: bool) -> int:
    if shutil.which("allure") is None:
        print("[!] Allure CLI not found on PATH; results are in allure-results/")
        return 1
    generated = subprocess.run(["allure", "generate", str(RESULTS), "--clean", "-o", str(REPORT)])
    if generated.returncode != 0:
        print("[!] Allure could not build the report")
        return generated.returncode
    print(f"[+] Report written to {REPORT}/")
    if serve:
        try:
            subprocess.run(["allure", "open", str(REPORT)])
        except KeyboardInterrupt:
            print("\n[+] Allure server stopped")
    return 0


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[1])
    parser.add_argument("suite", nargs="?", default="all", choices=sorted(SUITES))
    parser.add_argument("--no-open", action="store_true", help="Build the report without serving it")
    args = parser.parse_args()

    for directory in (RESULTS, REPORT):
        shutil.rmtree(directory, ignore_errors=True)
    if args.suite in ("all", "integration"):
        os.environ["RUN_INTEGRATION"] = "1"

    print(f"[*] Running the {args.suite} suite")
    status = subprocess.run(pytest_command(args.suite)).returncode
    print("[+] All tests passed" if status == 0 else f"[!] pytest exited with {status}")

    write_environment()
    report_status = build_report(serve=not args.no_open)
    return status or report_status


if __name__ == "__main__":
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        print("\n[!] Interrupted")
        sys.exit(1)
