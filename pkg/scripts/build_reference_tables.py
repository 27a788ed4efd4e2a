"""Precompute the finite-difference reference tables used as evaluation oracles."""
import sys
from pathlib import Path

# Add parent directory to Python path
sys.path.insert(0, str(Path(__file__).parent.parent))

import argparse
import logging

from config import settings
from reference_solvers import REFERENCE_PROBLEMS, load_reference, table_path

if __name__ == "__main__":
    logging.basicConfig(level=settings.LOG_LEVEL)
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--resolution", type=int, default=settings.REFERENCE_RESOLUTION)
    parser.add_argument("--dir", default=settings.REFERENCE_DIR)
    parser.add_argument("problems", nargs="*", default=list(REFERENCE_PROBLEMS))
    args = parser.parse_args()

    for problem in args.problems:
        print(f"Building {problem} at resolution {args.resolution}...")
        load_reference(problem, args.resolution, args.dir)
        print(f"  {table_path(problem, args.resolution, args.dir)}")

    print("Reference tables ready!")
