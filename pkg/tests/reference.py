"""Frozen expected values and an independent brute-force oracle.

Everything here was derived by hand or by exhaustive enumeration and is
written down before the modules under test. Tests compare the package
against these tables; the tables never import scheduling logic from the
package.
"""

import itertools
import math

# Two-request demo workload: A needs 3+3+3 seconds in three segments,
# B needs 4+1+2, both arrive at t=0, no API gaps, one segment at a time.
#
# fcfs runs segments in ready order:
#   A1[0,3] B1[3,7] A2[7,10] B2[10,11] A3[11,14] B3[14,16]
# sjf-segment always picks the shortest ready segment:
#   A1[0,3] A2[3,6] A3[6,9] B1[9,13] B2[13,14] B3[14,16]
# las picks the least attained service so far:
#   A1[0,3] B1[3,7] A2[7,10] B2[10,11] B3[11,13] A3[13,16]
# sjf-request picks the smallest total remaining work (B: 7 < A: 9):
#   B1[0,4] B2[4,5] B3[5,7] A1[7,10] A2[10,13] A3[13,16]
FIGURE2_EXPECTED = {
    "fcfs": {"A": 14.0, "B": 16.0, "avg": 15.0},
    "sjf-segment": {"A": 9.0, "B": 16.0, "avg": 12.5},
    "las": {"A": 16.0, "B": 13.0, "avg": 14.5},
    "sjf-request": {"A": 16.0, "B": 7.0, "avg": 11.5},
}

# (request, segment, start, end) for the fcfs schedule above.
FIGURE2_FCFS_LANES = (
    ("A", 1, 0.0, 3.0),
    ("B", 1, 3.0, 7.0),
    ("A", 2, 7.0, 10.0),
    ("B", 2, 10.0, 11.0),
    ("A", 3, 11.0, 14.0),
    ("B", 3, 14.0, 16.0),
)

FIGURE2_ORACLE_AVG = 11.5


def brute_force_best_avg_jct(jobs):
    """Minimum average completion time over all segment interleavings.

    ``jobs`` is a list of (arrival, computes, gaps) where ``computes``
    holds per-segment durations and ``gaps`` the forced idle gap after
    each segment (the gap after the last segment is ignored). One
    machine, one segment at a time, no preemption. For any fixed
    interleaving, starting every segment as early as possible is
    pointwise optimal, so only the orderings are enumerated.
    """
    pool = []
    for idx, (_, computes, _) in enumerate(jobs):
        pool.extend([idx] * len(computes))
    best = math.inf
    for perm in set(itertools.permutations(pool)):
        machine = 0.0
        next_seg = [0] * len(jobs)
        ready = [arrival for arrival, _, _ in jobs]
        finish = [None] * len(jobs)
        total = 0.0
        for idx in perm:
            arrival, computes, gaps = jobs[idx]
            seg = next_seg[idx]
            start = max(machine, ready[idx])
            end = start + computes[seg]
            machine = end
            next_seg[idx] = seg + 1
            if next_seg[idx] == len(computes):
                finish[idx] = end
                total += end - arrival
            else:
                ready[idx] = end + gaps[seg]
        if total < best:
            best = total
    return best / len(jobs)
