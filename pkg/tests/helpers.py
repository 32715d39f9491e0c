"""Shared test utilities."""
from itertools import permutations, product

import numpy as np
from scipy import stats as sps

from htsrecon.hierarchy import Hierarchy


def random_tree(rng: np.random.Generator, max_depth: int = 4, max_leaves: int = 40) -> dict:
    """Balanced random tree with 1..max_depth levels below the root."""
    depth = int(rng.integers(1, max_depth + 1))
    while True:
        branching = [int(rng.integers(1, 5)) for _ in range(depth)]
        if int(np.prod(branching)) <= max_leaves:
            break

    counter = [0]

    def build(level: int) -> dict:
        counter[0] += 1
        node = {"id": f"n{counter[0]}"}
        if level < depth:
            # vary the fan-out per node around the level's branching factor
            k = max(1, branching[level] + int(rng.integers(-1, 2)))
            node["children"] = [build(level + 1) for _ in range(k)]
        return node

    while True:
        counter[0] = 0
        tree = build(0)
        h = Hierarchy.from_tree(tree)
        if h.m_bottom <= max_leaves:
            return tree


def projected_gradient_qp(q, c, tol=1e-12, max_iter=200_000):
    """min 1/2 b'Qb - c'b s.t. b >= 0 by accelerated projected gradient
    with adaptive restart; used as an independent oracle."""
    q = np.asarray(q, float)
    c = np.asarray(c, float)
    step = 1.0 / np.linalg.eigvalsh(q).max()
    x = np.zeros(len(c))
    y = x.copy()
    t = 1.0
    for _ in range(max_iter):
        x_new = np.maximum(y - step * (q @ y - c), 0.0)
        if np.max(np.abs(x_new - x)) <= tol * max(1.0, np.max(np.abs(x_new))):
            x = x_new
            break
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = x_new + ((t - 1.0) / t_new) * (x_new - x)
        # restart momentum when the objective goes up
        if (x_new - x) @ (q @ x_new - c) > 0:
            y = x_new.copy()
            t_new = 1.0
        x, t = x_new, t_new
    return x


def random_spd(rng, n, cond=100.0):
    a = rng.normal(size=(n, n))
    u, _ = np.linalg.qr(a)
    eig = np.exp(rng.uniform(0.0, np.log(cond), n))
    m = (u * eig) @ u.T
    return 0.5 * (m + m.T)


def friedman_stat_oracle(x):
    """Textbook Friedman chi-square with average ranks and tie correction."""
    n, k = x.shape
    r = np.array([sps.rankdata(row) for row in x])
    rbar = r.mean(axis=0)
    num = 12.0 * n / (k * (k + 1)) * np.sum((rbar - (k + 1) / 2) ** 2)
    ties = sum(np.sum(c ** 3 - c) for c in (np.unique(row, return_counts=True)[1] for row in r))
    return num / (1 - ties / (n * k * (k * k - 1))), r


def friedman_exact_oracle(x):
    """Brute force over every combination of within-row rank permutations."""
    stat, r = friedman_stat_oracle(x)
    n, k = r.shape
    rows = [sorted(set(permutations(row))) for row in r]
    hits = total = 0
    for combo in product(*rows):
        rs = np.sum(combo, axis=0)
        s = np.sum((rs - n * (k + 1) / 2) ** 2)
        hits += s >= np.sum((r.sum(axis=0) - n * (k + 1) / 2) ** 2) - 1e-9
        total += 1
    return stat, hits / total


def wilcoxon_exact_oracle(d):
    """Brute force over all 2^n sign patterns of the ranked magnitudes."""
    d = d[d != 0]
    r = sps.rankdata(np.abs(d))
    wp = r[d > 0].sum()
    ge = le = 0
    for signs in product((0, 1), repeat=len(d)):
        w = float(np.dot(signs, r))
        ge += w >= wp - 1e-9
        le += w <= wp + 1e-9
    total = 2 ** len(d)
    return ge / total, le / total


# acceptance lines collected during the run and echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def record(number: int, title: str, ok: bool, detail: str) -> bool:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d}: {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok
