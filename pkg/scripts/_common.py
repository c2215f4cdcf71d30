"""Shared helpers for the experiment scripts."""
import argparse
import csv
import math
from pathlib import Path

from scipy.stats import norm

from chaoslab.potentials import ExternalPotential, PotentialSpec
from chaoslab.transport import quantile_from_density

QUAD = ExternalPotential.quadratic(1.0)
DYSON = PotentialSpec.logarithmic(QUAD)
INF = math.inf


def gaussian(M, mean=0.0, std=1.0):
    return quantile_from_density(norm(mean, std).ppf, M)


def parser(doc):
    ap = argparse.ArgumentParser(description=doc.strip().splitlines()[0])
    ap.add_argument("--out", default="out", help="directory for CSV output")
    return ap


def write_rows(out, name, header, rows):
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    with open(path / name, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path / name
