"""Write configs/example_public.csv: simulated spectra in a flat public-dataset layout."""

import csv
from pathlib import Path

from edfa_twin.datasets import DatasetProtocol
from edfa_twin.sim import default_amplifier_config, generate_dataset


def main():
    grid, amp = default_amplifier_config()
    protocol = DatasetProtocol([True] * len(grid))
    ds = generate_dataset(amp, protocol, 20, seed=5, grid=grid)
    n = len(grid)
    out = Path(__file__).resolve().parents[1] / "configs" / "example_public.csv"
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample"] + [f"pin_{i}" for i in range(1, n + 1)]
                   + [f"pout_{i}" for i in range(1, n + 1)])
        for r in ds.records:
            pout = r.input.values_dbm + r.gain.values_db
            w.writerow([r.sample_id] + [f"{v:.4f}" for v in r.input.values_dbm]
                       + [f"{v:.4f}" for v in pout])
    print(f"wrote {len(ds)} rows to {out}")


if __name__ == "__main__":
    main()
