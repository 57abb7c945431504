"""Worker loop step: forward local statistics under the coordinator's command.

Reads the per-iteration command file. Under Fit the site re-sends its cached
sufficient statistics (with the model coefficients it currently holds, so the
coordinator knows which iterate the contribution belongs to). Under Predict
it additionally scores its own shard with the latest model and emits a
row-level predictions table.
"""

import csv
import json
import os
import sys

out_dir = os.environ["FABRIC_OUT"]
site_id = os.environ["SITE_ID"]
iteration = int(os.environ.get("FABRIC_ITERATION", "0"))

command = os.environ.get("FABRIC_COMMAND", "Fit")
if os.path.exists("command"):  # the command file is authoritative
    for line in open("command"):
        key, _, value = line.strip().partition("=")
        if key == "COMMAND":
            command = value

with open("gram.json") as fh:
    stats = json.load(fh)

theta = [0.0, 0.0, 0.0]
if os.path.exists("model.json"):  # coordinator feedback from last iteration
    with open("model.json") as fh:
        theta = json.load(fh)["theta"]

partial = {"site": site_id, "iteration": iteration, "theta_used": theta,
           "gram": stats["gram"], "moment": stats["moment"],
           "yty": stats["yty"], "rows": stats["rows"]}
with open(os.path.join(out_dir, f"partial_{site_id}.json"), "w") as fh:
    json.dump(partial, fh, sort_keys=True)

if command == "Predict":
    datasets = json.loads(os.environ["FABRIC_DATASETS"])
    if len(datasets) != 1:
        print("expected exactly one mounted shard", file=sys.stderr)
        sys.exit(2)
    [path] = datasets.values()
    with open(path, newline="") as src, \
            open(os.path.join(out_dir, "predictions.csv"), "w",
                 newline="") as dst:
        writer = csv.writer(dst)
        writer.writerow(["row_id", "illuminance", "occupancy",
                         "switched_on", "predicted"])
        for row in csv.DictReader(src):
            x1, x2 = float(row["illuminance"]), float(row["occupancy"])
            predicted = theta[0] + theta[1] * x1 + theta[2] * x2
            writer.writerow([row["row_id"], row["illuminance"],
                             row["occupancy"], row["switched_on"],
                             f"{predicted:.6f}"])

with open("metrics", "w") as fh:
    fh.write(f"rows={stats['rows']}\n")
    fh.write(f"seen_command={command}\n")
