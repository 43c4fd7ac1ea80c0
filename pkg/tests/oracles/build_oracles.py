"""Regenerate frozen.json: reference values computed with mpmath at 30 digits.

Nothing here imports bmimap; every value comes from the defining integrals
or closed forms evaluated in arbitrary precision.

    python tests/oracles/build_oracles.py
"""

import json
from pathlib import Path

import mpmath as mp

mp.mp.dps = 30
OUT = Path(__file__).with_name("frozen.json")


def owens_t(h, a):
    h, a = mp.mpf(h), mp.mpf(a)
    f = lambda x: mp.exp(-h * h * (1 + x * x) / 2) / (1 + x * x)
    return mp.quad(f, [0, a]) / (2 * mp.pi)


def cdf(x):
    return mp.ncdf(mp.mpf(x))


def quantile(p):
    return mp.sqrt(2) * mp.erfinv(2 * mp.mpf(p) - 1)


def percentile_moments(m, s):
    """E[Phi(Z)] and Var[Phi(Z)] for Z ~ N(m, s^2), by direct integration."""
    m, s = mp.mpf(m), mp.mpf(s)
    w = lambda x: mp.npdf(x)
    e1 = mp.quad(lambda x: mp.ncdf(m + s * x) * w(x), [-mp.inf, 0, mp.inf])
    e2 = mp.quad(lambda x: mp.ncdf(m + s * x) ** 2 * w(x), [-mp.inf, 0, mp.inf])
    return e1, e2 - e1 * e1


def induced_moments(alpha, beta):
    """Mean, variance, skewness, excess kurtosis of Phi^-1(P), P ~ Beta(alpha, beta)."""
    a, b = mp.mpf(alpha), mp.mpf(beta)
    lb = mp.log(mp.beta(a, b))

    def dens(z):
        return mp.exp((a - 1) * mp.log(mp.ncdf(z)) + (b - 1) * mp.log(mp.ncdf(-z)) - lb) * mp.npdf(z)

    mom = [mp.quad(lambda z, k=k: z ** k * dens(z), [-40, -5, 0, 5, 40]) for k in range(5)]
    mu = mom[1] / mom[0]
    c2 = mom[2] / mom[0] - mu ** 2
    c3 = mom[3] / mom[0] - 3 * mu * mom[2] / mom[0] + 2 * mu ** 3
    c4 = mom[4] / mom[0] - 4 * mu * mom[3] / mom[0] + 6 * mu ** 2 * mom[2] / mom[0] - 3 * mu ** 4
    return {"mass": float(mom[0]), "mean": float(mu), "var": float(c2),
            "skew": float(c3 / c2 ** 1.5), "exkurt": float(c4 / c2 ** 2 - 3),
            "mass_pm8": float(mp.quad(dens, [-8, 0, 8]))}


def lms_z(b, lam, mu, sigma):
    b, lam, mu, sigma = map(mp.mpf, (b, lam, mu, sigma))
    return ((b / mu) ** lam - 1) / (lam * sigma)


def main():
    hs = [float(x) for x in mp.linspace(-4, 4, 50)]
    as_ = [float(x) for x in mp.linspace(-5, 5, 50)]
    grid = [[float(owens_t(h, a)) for a in as_] for h in hs]
    out = {
        "owens_t_grid": {"h": hs, "a": as_, "T": grid},
        "owens_t_points": {f"{h},{a}": float(owens_t(h, a))
                           for h, a in [(0.5, 0.5), (0.0, 1.0), (1.0, 0.3), (2.5, 4.0), (-1.7, 0.9)]},
        "cdf": {str(x): float(cdf(x)) for x in (-8.0, -3.0, -1.0, 0.0, 1.0, 1.96, 3.0, 8.0)},
        "pdf": {str(x): float(mp.npdf(x)) for x in (0.0, 1.0, 2.0)},
        "quantile": {str(p): float(quantile(p)) for p in (1e-10, 1e-4, 0.025, 0.3, 0.5, 0.975, 0.999999)},
        "percentile_moments": {f"{m},{s}": [float(v) for v in percentile_moments(m, s)]
                               for m, s in [(1.0, 0.5), (0.3, 0.8), (0.5, 1.2), (-0.6, 1.3), (0.8, 0.9),
                                            (-2.0, 2.0), (2.0, 0.5)]},
        "induced": {f"{a},{b}": induced_moments(a, b)
                    for a, b in [(0.5, 0.5), (0.7, 0.7), (1.0, 1.0), (2.0, 2.0), (5.0, 5.0), (2.0, 5.0)]},
        "lms_z": {"20,-1.5,17,0.12": float(lms_z(20, -1.5, 17, 0.12))},
    }
    OUT.write_text(json.dumps(out, indent=1) + "\n")


if __name__ == "__main__":
    main()
