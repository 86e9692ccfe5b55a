"""Regenerate the SYNTHETIC example inputs in this directory.

None of these files are real study data. They mimic the shape of two common
workflows: a 3 x 3 treatment-by-subject design, and a set of replicate
samples with one implausibly precise estimate.
"""

from pathlib import Path

import numpy as np

from betta.simulation import NbConfig, sample_truncated_nb

HERE = Path(__file__).parent


def main():
    rng = np.random.default_rng(20140601)

    # frequency-count tables for `betta estimate`
    for k, (size, prob, n) in enumerate([(2.0, 0.3, 800), (1.2, 0.2, 1200), (500.0, 0.99, 5000)], start=1):
        t = sample_truncated_nb(NbConfig(size, prob, n, seed=k))
        lines = ["frequency,count"] + [f"{j},{f}" for j, f in t.entries]
        (HERE / f"freq_sample{k}.csv").write_text("\n".join(lines) + "\n")

    # treatment x subject design for `betta fit`
    effects = {"PRE": 0.0, "TR": -450.0, "POST": -20.0}
    subject = {"A": 0.0, "B": 150.0, "C": -90.0}
    est = ["sample_id,c_hat,se"]
    cov = ["sample_id,treatment,subject"]
    for s in subject:
        for trt, eff in effects.items():
            sid = f"{s}_{trt}"
            se = rng.uniform(30, 80)
            c = 1600 + eff + subject[s] + rng.normal(0, 40) + rng.normal(0, se)
            est.append(f"{sid},{c:.2f},{se:.2f}")
            cov.append(f"{sid},{trt},{s}")
    (HERE / "design_estimates.csv").write_text("\n".join(est) + "\n")
    (HERE / "design_covariates.csv").write_text("\n".join(cov) + "\n")

    # replicates with one tight outlier for the exclude-and-refit workflow
    rows = ["sample_id,c_hat,se"]
    for k in range(1, 9):
        se = rng.uniform(150, 300)
        rows.append(f"R{k},{3000 + rng.normal(0, se):.2f},{se:.2f}")
    rows.append("R9,3650.00,4.00")
    (HERE / "replicate_estimates.csv").write_text("\n".join(rows) + "\n")


if __name__ == "__main__":
    main()
