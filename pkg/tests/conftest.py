import numpy as np
import pytest

from distillforge.dataset import Dataset, SynthSpec, synth_generate


def make_dataset(features, labels, class_count=None, kinds=None, sensitive=None):
    """Small hand-built Dataset; feature names are f0..f{d-1}."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    d = features.shape[1]
    if class_count is None:
        class_count = int(labels.max()) + 1
    ds = Dataset(
        features=features,
        labels=labels,
        class_count=class_count,
        feature_names=tuple(f"f{j}" for j in range(d)),
        feature_kinds=tuple(kinds) if kinds else tuple("numeric" for _ in range(d)),
        sensitive={k: np.asarray(v, dtype=np.int64) for k, v in (sensitive or {}).items()},
        missing_mask=np.isnan(features),
    )
    ds.validate()
    return ds


def random_simplex(rng, n, c):
    g = rng.gamma(1.0, 1.0, size=(n, c))
    return g / g.sum(axis=1, keepdims=True)


@pytest.fixture(scope="session")
def synth_small():
    return synth_generate(SynthSpec(n=240, d=6, classes=2, cluster_sep=2.5,
                                    label_noise=0.05, seed=7))


@pytest.fixture(scope="session")
def synth_multiclass():
    return synth_generate(SynthSpec(n=360, d=8, classes=3, cluster_sep=3.0,
                                    label_noise=0.05, seed=11))
