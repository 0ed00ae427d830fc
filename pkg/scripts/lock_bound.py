"""Brute-force worst case of the two-reference lock.

Searches over residual rotations M of the Poincare sphere whose action on two
Stokes-orthogonal references keeps both projections >= threshold, and reports
the largest rotation angle, the largest displacement of any probe state and
the largest Phi+ fidelity penalty 1 - cos^2(angle/2) for a photon sent
through M.  The printed numbers are frozen in ``qdlink.stabilizer``.

    python scripts/lock_bound.py [--threshold 0.985] [--samples 2000000]
"""

import argparse

import numpy as np
from scipy.optimize import minimize
from scipy.spatial.transform import Rotation


def feasible(rotvecs, threshold):
    m = Rotation.from_rotvec(rotvecs).as_matrix()
    eta_a = m[:, 2, 2]  # reference a along s3
    eta_b = m[:, 0, 0]  # reference b along s1
    return (eta_a >= threshold) & (eta_b >= threshold)


def search(threshold, samples, seed):
    rng = np.random.default_rng(seed)
    max_angle = np.arccos(2 * threshold - 1) * 1.2
    best = np.zeros(3)
    done = 0
    while done < samples:
        n = min(200_000, samples - done)
        # uniform in the ball of radius max_angle
        v = rng.standard_normal((n, 3))
        v /= np.linalg.norm(v, axis=1)[:, None]
        v *= max_angle * rng.random(n)[:, None] ** (1 / 3)
        ok = feasible(v, threshold)
        ang = np.linalg.norm(v, axis=1)
        ang[~ok] = 0
        i = int(np.argmax(ang))
        if ang[i] > np.linalg.norm(best):
            best = v[i]
        done += n

    # polish the best random candidate with a constrained local search
    cons = [
        {"type": "ineq", "fun": lambda x: Rotation.from_rotvec(x).as_matrix()[2, 2] - threshold},
        {"type": "ineq", "fun": lambda x: Rotation.from_rotvec(x).as_matrix()[0, 0] - threshold},
    ]
    res = minimize(lambda x: -np.dot(x, x), best, constraints=cons, method="SLSQP",
                   options={"ftol": 1e-15, "maxiter": 500})
    x = res.x if feasible(res.x[None, :], threshold - 1e-12)[0] else best
    return float(np.linalg.norm(best)), float(np.linalg.norm(x))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--threshold", type=float, default=0.985)
    ap.add_argument("--samples", type=int, default=2_000_000)
    ap.add_argument("--seed", type=int, default=20190101)
    a = ap.parse_args()
    raw, polished = search(a.threshold, a.samples, a.seed)
    angle = max(raw, polished)
    penalty = 1 - np.cos(angle / 2) ** 2
    print(f"threshold            {a.threshold}")
    print(f"random-search angle  {raw:.9f} rad")
    print(f"polished angle       {polished:.9f} rad ({np.degrees(polished):.6f} deg)")
    print(f"probe displacement   <= {angle:.9f} rad")
    print(f"Phi+ penalty bound   {penalty:.9f}")


if __name__ == "__main__":
    main()
