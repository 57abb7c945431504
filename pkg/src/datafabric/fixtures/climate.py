"""Synthetic monthly climate grid: per-region sinusoid + trend + seeded noise.

The table stands in for a gridded climate-projection archive at desk scale:
for every (model, year, month, region, grid cell) it carries one temperature
and one precipitation value. Regions differ in baseline, seasonal amplitude,
and century trend, so summaries grouped by season and region have visible
structure.
"""

from __future__ import annotations

import io
import math
import random

DEFAULT_SEED = 61
MODELS = ("m0", "m1")
YEARS = (2049, 2050, 2051)
REGIONS = ("northeast", "southeast", "midwest", "mountain")
CELLS_PER_REGION = 6  # 2 x 3 grid of sample points

CSV_HEADER = ("model,region,lat,lon,year,month,"
              "temperature_c,precipitation_mm")

SEASONS = ("winter", "spring", "summer", "fall")

# region -> (base temp C, seasonal amplitude C, temp trend C/decade,
#            base precip mm, precip amplitude mm, lat anchor, lon anchor)
_REGION_TABLE = {
    "northeast": (9.0, 11.0, 0.35, 95.0, 25.0, 42.5, -73.5),
    "southeast": (19.0, 7.0, 0.25, 110.0, 35.0, 32.5, -83.5),
    "midwest": (10.0, 14.0, 0.40, 75.0, 30.0, 41.5, -93.5),
    "mountain": (7.0, 10.0, 0.45, 40.0, 15.0, 39.5, -106.5),
}

# model -> additive offset, so projections disagree slightly
_MODEL_OFFSET = {"m0": 0.0, "m1": 0.8}

TEMPERATURE_NOISE_STD = 0.3
PRECIPITATION_NOISE_STD = 2.0


def month_to_season(month: int) -> str:
    if month in (12, 1, 2):
        return "winter"
    if month in (3, 4, 5):
        return "spring"
    if month in (6, 7, 8):
        return "summer"
    return "fall"


def _cells(region: str) -> list[tuple[float, float]]:
    _, _, _, _, _, lat0, lon0 = _REGION_TABLE[region]
    return [(round(lat0 + 0.5 * r, 2), round(lon0 + 0.5 * c, 2))
            for r in range(2) for c in range(3)]


def generate_climate_grid(seed: int = DEFAULT_SEED,
                          years: tuple[int, ...] = YEARS,
                          models: tuple[str, ...] = MODELS,
                          regions: tuple[str, ...] = REGIONS) -> bytes:
    """Build the full grid table as CSV bytes; byte-identical per seed."""
    rng = random.Random(seed)
    buf = io.StringIO()
    buf.write(CSV_HEADER + "\n")
    for model in models:
        offset = _MODEL_OFFSET[model]
        for year in years:
            for month in range(1, 13):
                phase = math.sin(2 * math.pi * (month - 4) / 12)
                for region in regions:
                    base_t, amp_t, trend_t, base_p, amp_p, _, _ = (
                        _REGION_TABLE[region])
                    for lat, lon in _cells(region):
                        temp = (base_t + offset + amp_t * phase
                                + trend_t * (year - 2000) / 10
                                + rng.gauss(0, TEMPERATURE_NOISE_STD))
                        precip = max(0.0, base_p - amp_p * phase
                                     + rng.gauss(0, PRECIPITATION_NOISE_STD))
                        buf.write(f"{model},{region},{lat:.2f},{lon:.2f},"
                                  f"{year},{month},{temp:.3f},"
                                  f"{precip:.3f}\n")
    return buf.getvalue().encode()
