"""Reference computations kept independent of the package code paths they check."""
from functools import lru_cache

import mpmath
import numpy as np
import sympy as sp

# UR5 datasheet values typed in by hand (not read from data/ur5.arm)
UR5_DH = [  # (a, d, alpha)
    (0.0, 0.089159, sp.pi / 2),
    (-0.425, 0.0, 0),
    (-0.39225, 0.0, 0),
    (0.0, 0.10915, sp.pi / 2),
    (0.0, 0.09465, -sp.pi / 2),
    (0.0, 0.0823, 0),
]


def dh_matrix(theta, a, d, alpha):
    ct, st = sp.cos(theta), sp.sin(theta)
    ca, sa = sp.cos(alpha), sp.sin(alpha)
    return sp.Matrix(
        [
            [ct, -st * ca, st * sa, a * ct],
            [st, ct * ca, -ct * sa, a * st],
            [0, sa, ca, d],
            [0, 0, 0, 1],
        ]
    )


@lru_cache(maxsize=None)
def symbolic_fk(table=tuple(UR5_DH), base_height=0.0):
    """Lambdified end-effector position from a symbolic product of 4x4 transforms."""
    qs = sp.symbols(f"q0:{len(table)}")
    T = sp.Matrix([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, base_height], [0, 0, 0, 1]])
    for q, (a, d, alpha) in zip(qs, table):
        T = T * dh_matrix(q, a, d, alpha)
    return sp.lambdify(qs, list(T[:3, 3]), modules="math")


def fk_oracle(theta, table=tuple(UR5_DH), base_height=0.0):
    f = symbolic_fk(table, base_height)
    return np.array(f(*[float(v) for v in theta]), dtype=float).ravel()


def t_quantile(p, df):
    """Student-t quantile by bisection on the regularized incomplete beta CDF."""
    mpmath.mp.dps = 40
    p = mpmath.mpf(p)

    def cdf(t):
        x = df / (df + t * t)
        tail = mpmath.betainc(df / 2, mpmath.mpf(1) / 2, 0, x, regularized=True) / 2
        return 1 - tail if t > 0 else tail

    lo, hi = mpmath.mpf(0), mpmath.mpf(100)
    for _ in range(200):
        mid = (lo + hi) / 2
        if cdf(mid) < p:
            lo = mid
        else:
            hi = mid
    return float((lo + hi) / 2)


def t_interval_oracle(values, level=0.65):
    x = [mpmath.mpf(v) for v in values]
    n = len(x)
    mean = sum(x) / n
    var = sum((v - mean) ** 2 for v in x) / (n - 1)
    half = t_quantile(0.5 + level / 2, n - 1) * mpmath.sqrt(var / n)
    return float(mean), float(mean - half), float(mean + half)


def numeric_grad(f, x, h=1e-5):
    x = np.array(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        g.flat[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def kink_margin(cache) -> float:
    """Smallest |pre-activation| over hidden ReLU layers of a forward cache."""
    return float(min(np.abs(p).min() for p in cache.pre[:-1])) if len(cache.pre) > 1 else np.inf


def probe_rows(rng, n, dim, margin_of, margin=1e-3):
    """``n`` normal rows whose ReLU pre-activations all sit at least ``margin`` from zero.

    Central differences straddling a kink do not estimate a derivative, so
    probes are kept clear of them; ``margin_of(row)`` returns the margin.
    """
    rows = []
    while len(rows) < n:
        x = rng.normal(size=dim)
        if margin_of(x) >= margin:
            rows.append(x)
    return np.array(rows)
