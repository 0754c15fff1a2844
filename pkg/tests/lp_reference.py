"""Brute-force LP reference: enumerate basic solutions of a bounded LP."""

import itertools

import numpy as np

from relusat.lp import LinearProgram, from_dense


def halfspaces(lp: LinearProgram):
    """All constraints and finite bounds as ``g . x <= h`` rows; equalities as two rows."""
    n = lp.num_vars
    G, h = [], []
    for coeffs, rel, rhs in lp.rows:
        g = np.zeros(n)
        for j, c in coeffs.items():
            g[j] = c
        if rel.value in ("<=", "="):
            G.append(g), h.append(rhs)
        if rel.value in (">=", "="):
            G.append(-g), h.append(-rhs)
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        if np.isfinite(lp.hi[j]):
            G.append(e), h.append(lp.hi[j])
        if np.isfinite(lp.lo[j]):
            G.append(-e), h.append(-lp.lo[j])
    return np.array(G), np.array(h)


def vertex_optimum(lp: LinearProgram, objective: np.ndarray, maximize: bool, tol: float = 1e-9):
    """Best objective over all vertices, or None when there is no vertex (infeasible).

    Only valid for bounded feasible regions, which every finite box guarantees.
    """
    G, h = halfspaces(lp)
    n = lp.num_vars
    best = None
    for rows in itertools.combinations(range(len(G)), n):
        M = G[list(rows)]
        if abs(np.linalg.det(M)) < 1e-10:
            continue
        x = np.linalg.solve(M, h[list(rows)])
        if np.all(G @ x <= h + tol * (1 + np.abs(h))):
            v = float(objective @ x)
            if best is None or (v > best if maximize else v < best):
                best = v
    return best


def random_lp(rng: np.random.Generator):
    """Small random LP over a finite box; returns ``(lp, objective, maximize)``."""
    n = int(rng.integers(2, 5))
    m = int(rng.integers(1, 6))
    lo = rng.uniform(-5, 0, n)
    hi = lo + rng.uniform(0.5, 6, n)
    A = np.round(rng.uniform(-3, 3, (m, n)), 2)
    rels = list(rng.choice(["<=", ">=", "="], size=m, p=[0.45, 0.45, 0.1]))
    # right-hand sides around a random box point keep most instances feasible
    x0 = rng.uniform(lo, hi)
    b = A @ x0 + rng.normal(0, 1.5, m)
    c = np.round(rng.uniform(-2, 2, n), 2)
    maximize = bool(rng.random() < 0.5)
    lp = from_dense(A, rels, b, c, "max" if maximize else "min", lo, hi)
    return lp, c, maximize
