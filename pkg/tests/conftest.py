import numpy as np
import pytest

from causalkmeans.data import Dataset
from causalkmeans.simulation import SimConfig, generate_sample


def write_dataset_csv(path, dataset: Dataset) -> str:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("y,a," + ",".join(f"x{j}" for j in range(1, dataset.d + 1)) + "\n")
        for i in range(dataset.n):
            cells = [f"{float(dataset.y[i]):.17g}", str(int(dataset.a[i]))]
            cells += [f"{float(v):.17g}" for v in dataset.x[i]]
            fh.write(",".join(cells) + "\n")
    return str(path)


@pytest.fixture
def hexagon_sample():
    """One medium draw from the benchmark design (seeded)."""
    return generate_sample(600, np.random.default_rng(0), SimConfig())
