import numpy as np
import pytest

from trustfuse.data import SyntheticSpec, generate_synthetic


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def tiny_dataset():
    """Small 2-class dataset shared by trainer/biomarker/CLI tests."""
    spec = SyntheticSpec(n=60, d=12, n_genes=40, n_modalities=2, n_blocks=3,
                         informative_rois=4, modality_scales=(1.3, 1.0))
    dataset, truth = generate_synthetic(spec, seed=7)
    return dataset, truth
