"""Slice the climate grid into one artifact per month of the requested year.

Parameters: year (int), model (str), dataset (dataset id, default
climate-grid). Emits out/month_01.csv ... out/month_12.csv plus a metrics
file with the month count. Exits non-zero if the year/model combination has
no records, so the failure surfaces in the task's error log.
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
if dataset_id not in datasets:
    print(f"dataset {dataset_id!r} is not mounted here", file=sys.stderr)
    sys.exit(2)

by_month = defaultdict(list)
with open(datasets[dataset_id], newline="") as fh:
    reader = csv.DictReader(fh)
    header = reader.fieldnames
    for row in reader:
        if int(row["year"]) == year and row["model"] == model:
            by_month[int(row["month"])].append(row)

if not by_month:
    print(f"no records for model {model!r} in year {year}", file=sys.stderr)
    sys.exit(3)

for month, rows in sorted(by_month.items()):
    with open(os.path.join(out_dir, f"month_{month:02d}.csv"), "w",
              newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=header)
        writer.writeheader()
        writer.writerows(rows)

with open("metrics", "w") as fh:
    fh.write(f"months={len(by_month)}\n")
    fh.write(f"rows={sum(len(r) for r in by_month.values())}\n")
