"""Run the invariant test subset (gradients, metrics, dissipation, conservation, reproducibility)."""
import subprocess
import sys
import time
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
KEYWORDS = ("finite_differences or metric_axioms or isometry or brute_force or dissipation or "
            "conservation or collapse or reproducible or bitwise or relabeling or equivariance")


def main():
    t0 = time.perf_counter()
    code = subprocess.call([sys.executable, "-m", "pytest", "-q", "-k", KEYWORDS, str(ROOT / "tests"),
                            "--ignore", str(ROOT / "tests" / "test_acceptance.py")])
    print(f"runtime {time.perf_counter() - t0:.1f} s")
    return code


if __name__ == "__main__":
    sys.exit(main())
