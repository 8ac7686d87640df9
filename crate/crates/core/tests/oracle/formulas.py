# High-precision reference values for the closed-form evaluators.
# Run: python3 formulas.py   (needs mpmath)
from mpmath import mp, mpf, log, sqrt, ceil

mp.dps = 50
C, C0, C1, C2 = 68, 12, 8100, 72


def m(x):
    return mpf(repr(x))


def beta(g):
    return 1 / (1 - m(g))


def sample_budget(n_pairs, eps, delta, g):
    t = ceil(C * beta(g) ** 3 * n_pairs / m(eps) ** 2 * log(C0 * n_pairs / m(delta)))
    return int(t), int(ceil(t / mpf(n_pairs)))


def iteration_count(eps, g):
    b, g = beta(g), m(g)
    k = max(0, int(ceil(log(6 * b / m(eps)) / log(1 / g))))
    while g ** k * b > m(eps) / 6:
        k += 1
    return k


def deviation_terms(n_pairs, n, delta, g):
    b, g, d = beta(g), m(g), m(delta)
    L = lambda k: log(k * n_pairs / d)
    b_v = sqrt(18 * g**4 * b**4 * L(3) / n) + 4 * g**2 * b**4 * L(3) / n
    c_pv = 2 * L(2)
    b_pv = (6 * (g * b) ** (mpf(4) / 3) * L(6) / n) ** (mpf(3) / 4) + 5 * g * b**2 * L(6) / n
    eps_p = (sqrt(17 * b**3 * L(4) / n)
             + (6 * (g * b**2) ** (mpf(4) / 3) * L(12) / n) ** (mpf(3) / 4)
             + 5 * g * b**3 * L(12) / n)
    return b_v, b_pv, c_pv, eps_p


def xi(eps, delta, g):
    v = 6 * beta(g) ** 3 / (C1 * m(eps) ** 2) * log(1 / (C2 * m(delta)))
    return max(v, mpf(0))


def lower_budget(n_pairs, eps, delta, g):
    return int(ceil(beta(g) ** 3 * n_pairs / (C1 * m(eps) ** 2) * log(n_pairs / (C2 * m(delta)))))


def s(x):
    return mp.nstr(x, 17)


for t in [(4, 0.1, 0.1, 0.5), (8, 0.05, 0.01, 0.9), (20, 0.2, 0.1, 0.6), (100, 0.01, 0.05, 0.99), (3, 0.5, 0.3, 0.0)]:
    print("sample_budget", t, sample_budget(*t))
for t in [(0.1, 0.9), (0.01, 0.99), (0.5, 0.5), (0.2, 0.6), (1e-3, 0.75)]:
    print("iteration_count", t, iteration_count(*t))
for t in [(8, 100, 0.1, 0.5), (8, 1000, 0.1, 0.5), (12, 1000, 0.05, 0.9), (16, 10000, 0.01, 0.99), (2, 7, 0.5, 0.3)]:
    print("deviation_terms", t, [s(v) for v in deviation_terms(*t)])
for t in [(0.2, 1e-3, 0.6), (0.05, 1e-4, 0.9), (0.01, 1e-6, 0.99), (0.1, 0.01, 0.4), (0.3, 0.5, 0.7)]:
    print("xi", t, s(xi(*t)))
for t in [(12, 0.1, 1e-3, 0.6), (300, 0.05, 0.01, 0.9), (1000, 0.01, 1e-4, 0.99), (3, 0.2, 0.02, 0.5), (48, 0.5, 0.1, 0.95)]:
    print("lower_budget", t, lower_budget(*t))
