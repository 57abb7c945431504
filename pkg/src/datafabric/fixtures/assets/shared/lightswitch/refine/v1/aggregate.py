"""Coordinator loop step: pool statistics, apply one damped update, decide.

Pools the workers' partials with this site's own cached statistics, applies

    theta_new = theta - (alpha / N) * (G theta - m)

and reports the pooled RMSE as the stopping metric. While coefficients are
still moving it keeps the workers fitting; once the largest per-iteration
coefficient change drops below ``predict_below`` it switches them to Predict
so the final iterations also produce row-level predictions.
"""

import glob
import json
import math
import os
import sys

params = json.loads(os.environ["FABRIC_PARAMS"])
out_dir = os.environ["FABRIC_OUT"]
iteration = int(os.environ.get("FABRIC_ITERATION", "1"))

alpha = float(params.get("alpha", 1.0))
predict_below = float(params.get("predict_below", 1e-3))

with open("gram.json") as fh:
    own = json.load(fh)

partials = []
for name in sorted(glob.glob("partial_*.json")):
    with open(name) as fh:
        partials.append(json.load(fh))
if not partials:
    print("no worker partials arrived", file=sys.stderr)
    sys.exit(2)

theta = partials[0]["theta_used"]  # the iterate every site currently holds

gram = [row[:] for row in own["gram"]]
moment = own["moment"][:]
yty = own["yty"]
rows = own["rows"]
for part in partials:
    for i in range(3):
        for j in range(3):
            gram[i][j] += part["gram"][i][j]
        moment[i] += part["moment"][i]
    yty += part["yty"]
    rows += part["rows"]

gradient = [sum(gram[i][j] * theta[j] for j in range(3)) - moment[i]
            for i in range(3)]
new_theta = [theta[i] - (alpha / rows) * gradient[i] for i in range(3)]
delta = max(abs(new_theta[i] - theta[i]) for i in range(3))

quad = sum(new_theta[i] * gram[i][j] * new_theta[j]
           for i in range(3) for j in range(3))
linear = sum(new_theta[i] * moment[i] for i in range(3))
rmse = math.sqrt(max(quad - 2 * linear + yty, 0.0) / rows)

with open(os.path.join(out_dir, "model.json"), "w") as fh:
    json.dump({"theta": new_theta, "iteration": iteration,
               "alpha": alpha, "rows": rows}, fh, sort_keys=True)

command = "Predict" if delta < predict_below else "Fit"
with open("metrics", "w") as fh:
    fh.write(f"rmse={rmse:.12g}\n")
    fh.write(f"delta={delta:.12g}\n")
    fh.write(f"rows={rows}\n")
    fh.write(f"command={command}\n")
