"""Regenerate the bundled example inputs under src/seroprev/data/examples/.

* screennc: summary-count inputs for a small low-prevalence screening study
  (40/40 sensitivity panel, 274/277 specificity panel, 24 of 2973 positive).
* belgium_synthetic: a synthetic 220-stratum table (10 age bands x 2 sexes
  x 11 provinces) with 15 unsampled strata and a logistic model config.
  Every count is simulated; nothing here is real survey data.

Run from the repository root: ``python3 scripts/make_examples.py``.
"""

from pathlib import Path

import numpy as np

from seroprev import fileio
from seroprev.model import MainStudy, StratumTable, ValidationStudy

ROOT = Path(__file__).resolve().parents[1] / "src" / "seroprev" / "data" / "examples"

AGES = ["0-9", "10-19", "20-29", "30-39", "40-49", "50-59", "60-69", "70-79", "80-89", "90+"]
SEXES = ["F", "M"]
PROVINCES = ["Antwerp", "Brussels", "East Flanders", "Flemish Brabant", "Hainaut", "Liege",
             "Limburg", "Luxembourg", "Namur", "Walloon Brabant", "West Flanders"]
AGE_SHARE = np.array([11.3, 11.5, 12.2, 13.0, 13.1, 13.8, 11.9, 8.0, 4.6, 0.6])
PROVINCE_SHARE = np.array([16.3, 10.6, 13.4, 10.2, 11.7, 9.6, 7.7, 2.5, 4.3, 3.5, 10.4])
N_MAIN = 3900
N_UNSAMPLED = 15
SEED = 20200330


def write_screennc(out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    fileio.write_validation(ValidationStudy(40, 40, 277, 274), out / "validation.csv")
    fileio.write_main(MainStudy.unstratified(24, 2973), out / "main.csv")


def _every_level_has_positives(records, minimum=2) -> bool:
    """Guard against a factor level with (almost) no positives, which would
    separate the logistic model."""
    pos = {}
    for x, z in records:
        age, sex, prov = z.split("|")
        for key in (age, sex, prov, f"{age}|{sex}"):
            pos[key] = pos.get(key, 0) + x
    return min(pos.values()) >= minimum


def write_belgium(out: Path) -> None:
    # advance the seed until the draw supports the bundled model
    seed = SEED
    while True:
        draw = _draw_belgium(np.random.default_rng(seed))
        if _every_level_has_positives(draw[1].records()):
            break
        seed += 1
    labels, main, gamma = draw
    out.mkdir(parents=True, exist_ok=True)
    fileio.write_validation(ValidationStudy(181, 154, 326, 322), out / "validation.csv")
    fileio.write_main(main, out / "main.csv")
    fileio.write_strata(StratumTable(tuple(labels), gamma), out / "strata.csv")
    (out / "model.cfg").write_text(
        "[model]\n"
        "link = logit\n"
        "factors = age, sex, province\n"
        "terms = age + sex + province + age:sex\n", encoding="utf-8")
    print(f"belgium_synthetic drawn with seed {seed}")


def _draw_belgium(rng):
    labels, gamma, age_i, sex_i, prov_i = [], [], [], [], []
    for a, age in enumerate(AGES):
        for s, sex in enumerate(SEXES):
            for p, prov in enumerate(PROVINCES):
                labels.append(f"{age}|{sex}|{prov}")
                female_share = 0.5 + 0.02 * a if s == 0 else 0.5 - 0.02 * a
                gamma.append(AGE_SHARE[a] * PROVINCE_SHARE[p] * female_share
                             * rng.uniform(0.9, 1.1))
                age_i.append(a)
                sex_i.append(s)
                prov_i.append(p)
    gamma = np.array(gamma) / np.sum(gamma)
    age_i, sex_i, prov_i = map(np.array, (age_i, sex_i, prov_i))

    # residual-sera sampling over-represents older adults
    weight = gamma * np.array([0.4, 0.6, 0.8, 1.0, 1.0, 1.1, 1.3, 1.6, 2.2, 3.0])[age_i]
    unsampled = rng.choice(np.flatnonzero((age_i == 0) | (age_i == 1) | (prov_i == 7)),
                           N_UNSAMPLED, replace=False)
    weight[unsampled] = 0.0
    weight /= weight.sum()

    eta = (-3.2 + np.linspace(0.3, -0.4, len(AGES))[age_i] + 0.1 * sex_i
           + rng.normal(0.0, 0.25, len(PROVINCES))[prov_i])
    pi_true = 1.0 / (1.0 + np.exp(-eta))
    se, sp = 154 / 181, 322 / 326
    p_pos = se * pi_true + (1 - sp) * (1 - pi_true)

    counts = rng.multinomial(N_MAIN, weight)
    # exactly N_UNSAMPLED empty strata: top up chance zeros from the largest cell
    for j in np.flatnonzero((counts == 0) & (weight > 0)):
        counts[np.argmax(counts)] -= 1
        counts[j] = 1
    records = []
    for j, n_j in enumerate(counts):
        x = rng.binomial(1, p_pos[j], n_j)
        records.extend((int(v), labels[j]) for v in x)
    order = rng.permutation(len(records))
    main = MainStudy.from_records([records[i] for i in order])
    return labels, main, gamma


if __name__ == "__main__":
    write_screennc(ROOT / "screennc")
    write_belgium(ROOT / "belgium_synthetic")
    print(f"wrote examples under {ROOT}")
