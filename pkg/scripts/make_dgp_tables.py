"""Regenerate src/seroprev/data/dgp_tables.json.

Stratum proportions come from a seeded Dirichlet draw. Sampling
probabilities start from the proportions, double the two most common
low-prevalence strata, and shrink the rest by seeded random factors whose
strength is tuned by bisection:

* DGP3: full positivity at n3 = 2500 with probability 0.89.
* DGP4: the high-prevalence (z20) strata are undersampled hard enough that
  about seven strata are unsampled per dataset, so positivity almost never
  holds.

Run from the repository root: ``python scripts/make_dgp_tables.py``.
"""

import json
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from seroprev.simulation import (
    DGP3_COEFS,
    DGP3_LEVELS,
    DGP3_TERMS,
    DGP4_COEFS,
    DGP4_LEVELS,
    DGP4_TERMS,
    factorial_layout,
)

N3 = 2500
OUT = Path(__file__).resolve().parents[1] / "src" / "seroprev" / "data" / "dgp_tables.json"


def positivity_prob(s, n=N3):
    return float(np.prod(-np.expm1(n * np.log1p(-s))))


def expected_unsampled(s, n=N3):
    return float(np.sum(np.exp(n * np.log1p(-s))))


def oversampled(offsets, gammas):
    low = np.nonzero(offsets <= np.quantile(offsets, 0.25))[0]
    return low[np.argsort(gammas[low])[::-1][:2]]


def dgp3(seed=3):
    labels, H, names = factorial_layout(DGP3_LEVELS, DGP3_TERMS)
    rng = np.random.default_rng(seed)
    gam = rng.dirichlet(np.full(len(labels), 4.0))
    off = H[:, 1:] @ np.array(DGP3_COEFS)
    e = rng.exponential(size=len(labels))
    up = oversampled(off, gam)

    def sampling(kappa):
        w = np.exp(-kappa * e)
        w[up] = 2.0
        s = gam * w
        return s / s.sum()

    kappa = brentq(lambda k: positivity_prob(sampling(k)) - 0.89, 0.0, 10.0, xtol=1e-12)
    return labels, H, names, gam, sampling(kappa), DGP3_COEFS, {"kappa": kappa}


def dgp4(seed=4):
    labels, H, names = factorial_layout(DGP4_LEVELS, DGP4_TERMS)
    rng = np.random.default_rng(seed)
    gam = rng.dirichlet(np.full(len(labels), 4.0))
    off = H[:, 1:] @ np.array(DGP4_COEFS)
    e = rng.exponential(size=len(labels))
    high = H[:, 2] == 1.0  # I(z20), the high-prevalence level
    up = oversampled(off, gam)

    def sampling(kappa):
        w = np.where(high, np.exp(-kappa * (1.0 + e)), np.exp(-0.5 * e))
        w[up] = 2.0
        s = gam * w
        return s / s.sum()

    kappa = brentq(lambda k: expected_unsampled(sampling(k)) - 7.0, 0.0, 20.0, xtol=1e-12)
    return labels, H, names, gam, sampling(kappa), DGP4_COEFS, {"kappa": kappa}


def main():
    out = {}
    for name, build in (("DGP3", dgp3), ("DGP4", dgp4)):
        labels, H, names, gam, s, coefs, info = build()
        out[name] = {
            "labels": list(labels),
            "gammas": gam.tolist(),
            "sampling": s.tolist(),
            "design": H.tolist(),
            "coefs": list(coefs),
            "term_names": list(names),
        }
        print(f"{name}: k={len(labels)} kappa={info['kappa']:.4f} "
              f"P(positivity)={positivity_prob(s):.4f} "
              f"E[unsampled]={expected_unsampled(s):.3f} "
              f"min s={s.min():.2e} undersampled={(s < gam).sum()}/{len(labels)}")
    OUT.write_text(json.dumps(out, indent=1) + "\n")
    print(f"wrote {OUT}")


if __name__ == "__main__":
    main()
