"""Regenerate the bundled three-aircraft scenario and its sample tracks.

Boundary states, horizons and wind are those of the published Haneda
example.  The recorded tracks are not redistributable, so the standard
trajectories are cubic Hermite curves between the boundary states.
"""

import csv
import json
from pathlib import Path

from trajsets.model import AircraftState
from trajsets.synthetic import hermite_track

DATA = Path(__file__).resolve().parents[1] / "src" / "trajsets" / "data"
WIND = [0.236, 0.236]
AIRCRAFT = [
    ("1", 1, 12, [4.71, -8.42, 16.4, -1.58], [-413.0, -97.5, 22.2, 2.63]),
    ("2", 2, 13, [4.50, -9.01, 17.7, -1.56], [-452.0, -123.0, 31.1, 2.84]),
    ("3", 2, 15, [-406.0, -217.0, 31.8, 0.471], [5.91, -1.96, 31.2, 0.833]),
]


def main():
    entries, rows = [], []
    for aid, t, T, x0, xT in AIRCRAFT:
        track = hermite_track(AircraftState(*x0), AircraftState(*xT), T - t)
        standard = [[round(float(x), 4), round(float(y), 4)] for x, y in track]
        entries.append({"id": aid, "t": t, "T": T, "x0": x0, "xT": xT, "standard": standard, "wind": WIND})
        rows.extend([aid, t + k, x, y] for k, (x, y) in enumerate(standard))
    doc = {
        "timestep_seconds": 360.0,
        "units": "NM",
        "limits": {
            "psi_max": 0.7853981633974483,
            "u_max": 15.0,
            "v_min": 5.0,
            "v_max": 80.0,
            "delta_v": 1.0,
            "delta_theta": 0.1,
            "safety_margin": 3.0,
            "eps": 0.1,
            "alpha": 0.01,
            "tol_terminal": 0.5,
        },
        "aircraft": entries,
    }
    (DATA / "haneda3.json").write_text(json.dumps(doc, indent=1) + "\n")
    with open(DATA / "haneda3_tracks.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "k", "x", "y"])
        w.writerows(rows)


if __name__ == "__main__":
    main()
