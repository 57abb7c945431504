"""Load the fixture asset tree into a workflow repository and materialize
the synthetic datasets data-site agents serve."""

from __future__ import annotations

from importlib import resources
from pathlib import Path
from typing import Optional

from ..model import Principal, parse_repo_path
from ..repo import RepoStore
from .climate import DEFAULT_SEED, generate_climate_grid
from .sensors import SHARD_SITES, generate_sensor_shards

# use case -> the sites its workflows touch
USE_CASE_SITES = {
    "climate": ("siteA",),
    "lightswitch": ("siteA", "siteB", "siteC"),
}


def _assets_root():
    return resources.files("datafabric.fixtures") / "assets"


def asset_tree() -> dict[str, bytes]:
    """Every shipped asset keyed by its repository path, e.g.
    ``/shared/climate/extraction/v1/conf.yml``."""
    root = _assets_root()
    tree: dict[str, bytes] = {}

    def walk(node, prefix: str) -> None:
        for child in node.iterdir():
            path = f"{prefix}/{child.name}"
            if child.is_dir():
                walk(child, path)
            else:
                tree[path] = child.read_bytes()

    walk(root, "")
    return dict(sorted(tree.items()))


def install_workflows(repo: RepoStore, principal: Principal) -> dict[str, str]:
    """Create the fixture use cases and upload every workflow version.
    Returns workflow name -> version path (e.g. ``"climate-extraction" ->
    "/shared/climate/extraction/v1"``)."""
    installed: dict[str, str] = {}
    versions: dict[str, list[tuple[str, bytes]]] = {}
    for path, data in asset_tree().items():
        parsed = parse_repo_path(path)
        version = parsed.parent()
        versions.setdefault(version.render(), []).append((parsed.file, data))

    created: set[str] = set()
    for version_path, files in versions.items():
        parsed = parse_repo_path(version_path)
        if parsed.use_case not in created:
            repo.create_use_case(principal, parsed.use_case,
                                 site_ids=USE_CASE_SITES[parsed.use_case])
            created.add(parsed.use_case)
        repo.add_version(principal, parsed.parent())
        for name, data in files:
            repo.upload(principal, parsed, name, data)
        installed[f"{parsed.use_case}-{parsed.workflow}"] = version_path
    return installed


def materialize_datasets(dest: Path, seed: int = DEFAULT_SEED,
                         sites: Optional[tuple[str, ...]] = None
                         ) -> dict[str, dict[str, Path]]:
    """Write the synthetic datasets under ``dest`` and return, per site, the
    dataset ids it should register mapped to their file paths."""
    dest = Path(dest)
    dest.mkdir(parents=True, exist_ok=True)
    by_site: dict[str, dict[str, Path]] = {}

    grid_path = dest / "climate_grid.csv"
    grid_path.write_bytes(generate_climate_grid(seed))
    by_site["siteA"] = {"climate-grid": grid_path}

    for site, data in generate_sensor_shards(
            seed, sites=sites or SHARD_SITES).items():
        shard_path = dest / f"shard_{site}.csv"
        shard_path.write_bytes(data)
        by_site.setdefault(site, {})[f"shard-{site}"] = shard_path
    return by_site
