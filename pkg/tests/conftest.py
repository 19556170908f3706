"""Shared fixtures: planted datasets on disk plus experiment config files."""

import pytest
import yaml

from alignrec import synthetic


@pytest.fixture
def planted_config(tmp_path):
    """Factory writing a planted dataset and a YAML config; returns the path.

    Keyword overrides land in the corresponding config section, so tests
    can pin grids, protocols, and sizes without repeating boilerplate.
    """

    def build(protocol="cold", solver="ease", grid=None, n_users=150,
              n_items=60, n_topics=6, seed=3, clicks=(12, 24), p_out=0.05,
              negatives=40, min_user_clicks=10, alignment=None,
              evaluation=None, attributes=("topic",), workers=None,
              output="out", name="exp"):
        root = tmp_path / name
        dataset, meta = synthetic.planted_dataset(
            n_users=n_users, n_items=n_items, n_topics=n_topics, seed=seed,
            clicks=clicks, p_out=p_out,
        )
        paths = synthetic.write_dataset_csvs(dataset, meta, root / "data")
        if grid is None:
            grid = {"lambda1": [0.5]} if solver == "ease" else {"lambda1": [0.5], "w1": [0.5]}
        cfg = {
            "seed": seed,
            "data": {"interactions": str(paths["interactions"])},
            "split": {"protocol": protocol},
            "attributes": [
                {"name": a, "kind": "categorical", "path": str(paths[a])}
                for a in attributes
            ],
            "alignment": {"delta": 0.5, "alpha": 1.0, "beta": 5.0},
            "solver": {"name": solver, "grid": grid},
            "output": str(root / output),
        }
        if protocol == "warm":
            cfg["split"]["negatives"] = negatives
            cfg["split"]["min_user_clicks"] = min_user_clicks
        if alignment:
            cfg["alignment"].update(alignment)
        if evaluation:
            cfg["evaluation"] = evaluation
        if workers is not None:
            cfg["workers"] = workers
        path = root / "config.yaml"
        path.write_text(yaml.safe_dump(cfg), encoding="utf-8")
        return str(path)

    return build
