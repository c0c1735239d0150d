"""Build the synthetic 6 x 7 generation panel shipped as ``synthetic_panel.csv``.

The panel is constructed so that its consecutive-day level pairs give the
reference transition counts below. Deviations are integers strictly inside
their snapping intervals and sum to zero on each day, so the monthly mean
equals the forecast.
"""

import csv
import sys

import numpy as np

LEVELS = (20, 0, -20)
COUNTS = np.array([[5, 5, 1], [4, 7, 5], [2, 4, 3]])  # pairs from row level to column level
FORECAST = (50, 110, 90, 130, 80, 70, 100)
MONTHS, DAYS = 6, 7
BOUNDS = {20: (11, 40), 0: (-9, 9), -20: (-40, -11)}


def _walks(rng):
    left = COUNTS.copy()
    seqs = []
    for _ in range(MONTHS):
        out_deg = left.sum(1)
        if not out_deg.any():
            return None
        s = int(rng.choice(3, p=out_deg / out_deg.sum()))
        seq = [s]
        for _ in range(DAYS - 1):
            row = left[seq[-1]]
            if not row.any():
                return None
            nxt = int(rng.choice(3, p=row / row.sum()))
            left[seq[-1], nxt] -= 1
            seq.append(nxt)
        seqs.append(seq)
    return seqs if not left.any() else None


def _column(levels):
    """Integer deviations inside the snapping intervals summing to zero, or None."""
    lo = [BOUNDS[v][0] for v in levels]
    hi = [BOUNDS[v][1] for v in levels]
    if sum(lo) > 0 or sum(hi) < 0:
        return None
    x = [(a + b) // 2 for a, b in zip(lo, hi)]
    gap = -sum(x)
    for k in range(len(x)):
        move = min(max(gap, lo[k] - x[k]), hi[k] - x[k])
        x[k] += move
        gap -= move
    return x if gap == 0 else None


def build(seed=0):
    rng = np.random.default_rng(seed)
    while True:
        seqs = _walks(rng)
        if seqs is None:
            continue
        cols = [_column([LEVELS[seqs[m][d]] for m in range(MONTHS)]) for d in range(DAYS)]
        if all(c is not None for c in cols):
            return [[cols[d][m] for d in range(DAYS)] for m in range(MONTHS)]


def main(path):
    dev = build()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["month", "day", "value"])
        for m in range(MONTHS):
            for d in range(DAYS):
                w.writerow([m + 1, d + 1, 10 * (FORECAST[d] + dev[m][d])])


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "src/gridstack/fixtures/synthetic_panel.csv")
