#!/usr/bin/env python3
"""
Test runner for the fractional counting simulator.
Runs the package tests without going through the CLI.
"""

import sys
import subprocess
from pathlib import Path

# End-to-end tests that run whole replicates
INTEGRATION_TESTS = ("test_pipeline.py", "test_cli.py")


def run_tests(test_type="all", verbose=False, coverage=False, keyword=None):
    """Run fractional counting tests."""

    scripts_dir = Path(__file__).parent
    test_dir = scripts_dir / "fractional_counting" / "tests"

    cmd = [sys.executable, "-m", "pytest"]

    if verbose:
        cmd.append("-v")

    if coverage:
        cmd.extend(["--cov=fractional_counting", "--cov-report=term-missing"])

    if keyword:
        cmd.extend(["-k", keyword])

    if test_type == "integration":
        cmd.extend(str(test_dir / name) for name in INTEGRATION_TESTS)
    elif test_type == "unit":
        cmd.append(str(test_dir))
        cmd.extend("--ignore=" + str(test_dir / name) for name in INTEGRATION_TESTS)
    else:  # all
        cmd.append(str(test_dir))

    print(f"Running: {' '.join(cmd)}")
    print(f"Working directory: {scripts_dir}")

    try:
        result = subprocess.run(cmd, cwd=scripts_dir)
        return result.returncode
    except FileNotFoundError:
        print("Error: pytest not found. Install it with: pip install pytest")
        return 1


if __name__ == "__main__":
    import argparse

    parser = argparse.ArgumentParser(description="Run fractional counting tests")
    parser.add_argument("--type", choices=["all", "unit", "integration"],
                        default="all", help="Type of tests to run")
    parser.add_argument("--verbose", "-v", action="store_true",
                        help="Verbose output")
    parser.add_argument("--coverage", action="store_true",
                        help="Run with coverage report")
    parser.add_argument("-k", dest="keyword", default=None,
                        help="Only run tests matching the expression")

    args = parser.parse_args()

    sys.exit(run_tests(args.type, args.verbose, args.coverage, args.keyword))
