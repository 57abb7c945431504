"""Three-site shard generator and reference math for the iterative fixture.

The synthetic target is a linear switching model: the probability that a
light is switched on as a function of normalized work-area illuminance and
occupancy. Each site holds a disjoint shard; sites exchange only sufficient
statistics (Gram matrix, moment vector, squared-target sum), never raw rows.
The coordinator applies damped least-squares updates

    theta_{k+1} = theta_k - (alpha / N) * (G theta_k - m)

until the pooled RMSE stabilizes. ``damped_fit`` is the standalone oracle for
that loop: the same math on the same statistics, with the same stopping rule
the orchestrator applies, so the distributed run can be checked against it.
"""

from __future__ import annotations

import csv
import io
import random
from typing import Iterable, Mapping

import numpy as np

from ..orchestrator import evaluate_stop
from ..model import StoppingCondition

DEFAULT_SEED = 61
SHARD_SITES = ("siteA", "siteB", "siteC")
ROWS_PER_SITE = 80
TRUE_COEFFICIENTS = (0.5, 0.3, -0.2)  # intercept, illuminance, occupancy
NOISE_STD = 0.01

ALPHA = 1.0            # damping factor of the coordinator update
PREDICT_BELOW = 1e-3   # coordinator switches workers to Predict under this
MAX_ITERATIONS = 25
METRIC_RTOL = 1e-3

CSV_HEADER = "row_id,illuminance,occupancy,switched_on"


def generate_sensor_shards(seed: int = DEFAULT_SEED,
                           rows_per_site: int = ROWS_PER_SITE,
                           sites: tuple[str, ...] = SHARD_SITES
                           ) -> dict[str, bytes]:
    """Disjoint shards of one seeded dataset; global row_id never repeats."""
    rng = random.Random(seed)
    b0, w1, w2 = TRUE_COEFFICIENTS
    shards: dict[str, bytes] = {}
    row_id = 0
    for site in sites:
        buf = io.StringIO()
        buf.write(CSV_HEADER + "\n")
        for _ in range(rows_per_site):
            x1 = round(rng.uniform(-1, 1), 6)
            x2 = round(rng.uniform(-1, 1), 6)
            y = round(b0 + w1 * x1 + w2 * x2 + rng.gauss(0, NOISE_STD), 6)
            buf.write(f"{row_id},{x1:.6f},{x2:.6f},{y:.6f}\n")
            row_id += 1
        shards[site] = buf.getvalue().encode()
    return shards


def load_sensor_rows(data: bytes) -> list[tuple[int, float, float, float]]:
    reader = csv.DictReader(io.StringIO(data.decode()))
    return [(int(r["row_id"]), float(r["illuminance"]),
             float(r["occupancy"]), float(r["switched_on"]))
            for r in reader]


def sufficient_statistics(rows: Iterable[tuple[int, float, float, float]]
                          ) -> dict:
    """Gram matrix, moment vector, squared-target sum, and row count — the
    only values a site ever shares. Mirrors the fixture's prepare script."""
    gram = [[0.0] * 3 for _ in range(3)]
    moment = [0.0] * 3
    yty = 0.0
    count = 0
    for _, x1, x2, y in rows:
        v = (1.0, x1, x2)
        for i in range(3):
            for j in range(3):
                gram[i][j] += v[i] * v[j]
            moment[i] += v[i] * y
        yty += y * y
        count += 1
    return {"gram": gram, "moment": moment, "yty": yty, "rows": count}


def _pool(stats: Iterable[Mapping]) -> tuple[np.ndarray, np.ndarray, float,
                                             int]:
    gram = np.zeros((3, 3))
    moment = np.zeros(3)
    yty = 0.0
    rows = 0
    for s in stats:
        gram += np.asarray(s["gram"])
        moment += np.asarray(s["moment"])
        yty += s["yty"]
        rows += s["rows"]
    return gram, moment, yty, rows


def closed_form(stats: Iterable[Mapping]) -> np.ndarray:
    """Exact least-squares solution on the pooled statistics."""
    gram, moment, _, _ = _pool(stats)
    return np.linalg.solve(gram, moment)


def damped_fit(stats: Iterable[Mapping], alpha: float = ALPHA,
               rtol: float = METRIC_RTOL,
               max_iterations: int = MAX_ITERATIONS
               ) -> tuple[np.ndarray, list[float], list[float]]:
    """Run the damped update loop exactly as the coordinator script does,
    stopping by the orchestrator's rule. Returns (theta, rmse history,
    per-iteration max coefficient change)."""
    gram, moment, yty, rows = _pool(stats)
    stop = StoppingCondition(max_iterations=max_iterations,
                             metric_name="rmse", relative_tolerance=rtol)
    theta = np.zeros(3)
    history: list[float] = []
    deltas: list[float] = []
    while True:
        new = theta - (alpha / rows) * (gram @ theta - moment)
        deltas.append(float(np.max(np.abs(new - theta))))
        theta = new
        sse = float(theta @ gram @ theta - 2 * theta @ moment + yty)
        history.append((max(sse, 0.0) / rows) ** 0.5)
        if evaluate_stop(history, stop):
            return theta, history, deltas
