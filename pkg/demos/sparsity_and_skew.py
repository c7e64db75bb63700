"""How probe sparsity shapes the zero-filled initial estimate.

Builds one synthetic day on a 32x32 grid, samples the fleet at several
penetration rates and prints coverage, RMSE and error skewness of the
initial estimate. Missing cells are zero-filled, so their error equals the
true speed. While those cells are a minority they form a long positive tail;
when most cells are missing they are the bulk and the few observed cells make
a tail on the other side, so the sign of the skew flips with coverage.

    python3 demos/sparsity_and_skew.py
"""

import numpy as np

from sparseflow.ingest import aggregate, sparsify
from sparseflow.roadmap import build_grid_map
from sparseflow.stats import coverage, error_distribution, rmse
from sparseflow.worldgen import DiurnalProfile, free_flow_speeds, gen_ideal_field, random_events, simulate_probes

T = 120
road_map = build_grid_map(32, 32, 0.25)
field = gen_ideal_field(road_map, T, random_events(road_map, T, 3, seed=1), 2.0, seed=2,
                        v_free=free_flow_speeds(road_map, seed=0), profile=DiurnalProfile.from_clock())
print(f"ideal field: {T} steps x {road_map.R} cells, mean speed {field.values.mean():.1f} km/h")

for n_vehicles in (2000, 40000):
    recs = simulate_probes(road_map, field, n_vehicles, 8.0, seed=3)
    print(f"\nfleet of {n_vehicles} vehicles ({len(recs)} records)")
    print("     p  coverage   rmse  skew(all)  skew(observed)")
    for p in (0.02, 0.05, 0.10, 0.20):
        est = aggregate(sparsify(recs, p, seed=4), road_map, T)
        full = error_distribution(field, est, True)
        seen = error_distribution(field, est, False)
        print(f"  {p:4.2f}  {coverage(est):8.3f}  {rmse(field, est):5.1f}  {full.skewness:9.2f}  {seen.skewness:14.2f}")

# observed cells alone: error of an n-record mean shrinks like sigma / sqrt(n)
est = aggregate(recs, road_map, T)
err = (est.values - field.values)[est.counts >= 1]
print(f"\nfull dense fleet: observed-cell error mean {err.mean():+.2f}, std {err.std():.2f} km/h")
