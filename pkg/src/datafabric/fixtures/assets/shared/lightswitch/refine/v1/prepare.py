"""First pass over the local shard: derive the site's sufficient statistics.

Runs exactly once per site. The Gram matrix, moment vector, squared-target
sum, and row count in out/gram.json are all later steps ever need — raw rows
never leave the site. The design matrix is [1, illuminance, occupancy].
"""

import csv
import json
import os
import sys

datasets = json.loads(os.environ["FABRIC_DATASETS"])
out_dir = os.environ["FABRIC_OUT"]
site_id = os.environ["SITE_ID"]

if len(datasets) != 1:
    print(f"expected exactly one mounted shard, got {sorted(datasets)}",
          file=sys.stderr)
    sys.exit(2)
[path] = datasets.values()

gram = [[0.0] * 3 for _ in range(3)]
moment = [0.0] * 3
yty = 0.0
rows = 0
with open(path, newline="") as fh:
    for row in csv.DictReader(fh):
        v = (1.0, float(row["illuminance"]), float(row["occupancy"]))
        y = float(row["switched_on"])
        for i in range(3):
            for j in range(3):
                gram[i][j] += v[i] * v[j]
            moment[i] += v[i] * y
        yty += y * y
        rows += 1

with open(os.path.join(out_dir, "gram.json"), "w") as fh:
    json.dump({"site": site_id, "gram": gram, "moment": moment,
               "yty": yty, "rows": rows}, fh, sort_keys=True)

with open("metrics", "w") as fh:
    fh.write(f"rows={rows}\n")
