import csv
import shutil

import pytest

metods_plots = pytest.importorskip("metods_plots")

GOLDEN = {
    "metrics": "metrics.csv",
    "eval": "eval.csv",
    "pca": "pca.csv",
    "pca_variance": "pca_variance.csv",
    "energy_grid": "energy_grid.csv",
    "selectivity": "selectivity_0.csv",
    "ablation": "ablation.csv",
}


@pytest.fixture
def golden():
    def path_for(schema_name):
        return metods_plots.golden_dir() / GOLDEN[schema_name]
    return path_for


@pytest.fixture
def mutate_csv(tmp_path, golden):
    """Copy a golden file and apply a row/header transform to the copy."""

    def apply(schema_name, transform):
        src = golden(schema_name)
        with open(src, newline="") as fh:
            rows = list(csv.reader(fh))
        rows = transform(rows)
        dst = tmp_path / src.name
        with open(dst, "w", newline="") as fh:
            csv.writer(fh).writerows(rows)
        return dst

    return apply


@pytest.fixture
def copy_golden(tmp_path, golden):
    def copy(schema_name):
        src = golden(schema_name)
        dst = tmp_path / src.name
        shutil.copy(src, dst)
        return dst
    return copy
