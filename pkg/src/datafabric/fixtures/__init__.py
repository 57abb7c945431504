"""Desk-scale runnable workflows with seeded synthetic datasets.

Two use cases ship as repository assets plus generators:

* ``climate`` — a monthly climate-style grid table with an extraction
  workflow (per-month slices for a requested year) and a summary workflow
  (means grouped by season and region).
* ``lightswitch`` — a three-site iterative model refinement: each site
  derives sufficient statistics from its private shard, a coordinator site
  applies damped least-squares updates and chooses each worker's next
  command until the error metric stabilizes.

Everything is deterministic under a fixed seed.
"""

from .climate import (
    DEFAULT_SEED,
    MODELS,
    REGIONS,
    SEASONS,
    generate_climate_grid,
    month_to_season,
)
from .install import asset_tree, install_workflows, materialize_datasets
from .sensors import (
    ALPHA,
    NOISE_STD,
    PREDICT_BELOW,
    ROWS_PER_SITE,
    SHARD_SITES,
    TRUE_COEFFICIENTS,
    closed_form,
    damped_fit,
    generate_sensor_shards,
    load_sensor_rows,
    sufficient_statistics,
)

__all__ = [
    "ALPHA",
    "DEFAULT_SEED",
    "MODELS",
    "NOISE_STD",
    "PREDICT_BELOW",
    "REGIONS",
    "ROWS_PER_SITE",
    "SEASONS",
    "SHARD_SITES",
    "TRUE_COEFFICIENTS",
    "asset_tree",
    "closed_form",
    "damped_fit",
    "generate_climate_grid",
    "generate_sensor_shards",
    "install_workflows",
    "load_sensor_rows",
    "materialize_datasets",
    "month_to_season",
    "sufficient_statistics",
]
