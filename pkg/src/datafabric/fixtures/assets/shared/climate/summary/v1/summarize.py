"""Summarize the climate grid by season/region, month/region, and year.

Parameters: year and model select the slice for the seasonal and monthly
summaries; the yearly summary spans every year of the model so trends stay
visible. Each output row carries mean temperature and precipitation.
"""

import csv
import json
import os
import sys
from collections import defaultdict

params = json.loads(os.environ["FABRIC_PARAMS"])
datasets = json.loads(os.environ["FABRIC_DATASETS"])
out_dir = os.environ["FABRIC_OUT"]

year = int(params.get("year", 2050))
model = str(params.get("model", "m0"))
dataset_id = params.get("dataset", "climate-grid")

SEASON_OF = {12: "winter", 1: "winter", 2: "winter",
             3: "spring", 4: "spring", 5: "spring",
             6: "summer", 7: "summer", 8: "summer",
             9: "fall", 10: "fall", 11: "fall"}
SEASON_ORDER = ("winter", "spring", "summer", "fall")

seasonal = defaultdict(list)
monthly = defaultdict(list)
yearly = defaultdict(list)
with open(datasets[dataset_id], newline="") as fh:
    for row in csv.DictReader(fh):
        if row["model"] != model:
            continue
        values = (float(row["temperature_c"]), float(row["precipitation_mm"]))
        yearly[(int(row["year"]), row["region"])].append(values)
        if int(row["year"]) == year:
            month = int(row["month"])
            seasonal[(SEASON_OF[month], row["region"])].append(values)
            monthly[(month, row["region"])].append(values)

if not seasonal:
    print(f"no records for model {model!r} in year {year}", file=sys.stderr)
    sys.exit(3)


def mean(samples, index):
    return sum(s[index] for s in samples) / len(samples)


def write(name, key_fields, groups, sort_key):
    with open(os.path.join(out_dir, name), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([*key_fields, "mean_temperature_c",
                         "mean_precipitation_mm"])
        for key in sorted(groups, key=sort_key):
            samples = groups[key]
            writer.writerow([*key, f"{mean(samples, 0):.3f}",
                             f"{mean(samples, 1):.3f}"])


write("seasonal.csv", ("season", "region"), seasonal,
      lambda k: (SEASON_ORDER.index(k[0]), k[1]))
write("monthly.csv", ("month", "region"), monthly, lambda k: k)
write("yearly.csv", ("year", "region"), yearly, lambda k: k)

with open("metrics", "w") as fh:
    fh.write(f"seasonal_groups={len(seasonal)}\n")
    fh.write(f"seasons={len({s for s, _ in seasonal})}\n")
    fh.write(f"regions={len({r for _, r in seasonal})}\n")
