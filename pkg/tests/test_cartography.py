import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as hst
from hypothesis.extra.numpy import arrays

from csal.cartography import build_map, export_map, pca_2d, read_map_csv, supervised_trajectory
from csal.classifier import ClassifierConfig
from csal.datamodel import Dataset, TrajectoryLog
from csal.errors import ConfigError, MissingLabels


def _log(rows):
    probs = np.array(rows, dtype=np.float64)
    return TrajectoryLog(probs, np.ones_like(probs, dtype=np.int64))


def test_constant_trajectory():
    dmap = build_map(_log([[0.7, 0.7, 0.7]]))
    assert dmap.confidence[0] == 0.7
    assert dmap.variability[0] == 0.0


def test_rising_trajectory():
    dmap = build_map(_log([[0.2, 0.4, 0.6]]))
    assert dmap.confidence[0] == pytest.approx(0.4, abs=1e-12)
    assert dmap.variability[0] == pytest.approx(np.sqrt(0.08 / 3), abs=1e-5)
    assert dmap.variability[0] == pytest.approx(0.16330, abs=1e-5)


def test_single_epoch():
    dmap = build_map(_log([[0.3], [0.9]]))
    assert dmap.confidence.tolist() == [0.3, 0.9]
    assert dmap.variability.tolist() == [0.0, 0.0]


trajectories = arrays(
    np.float64,
    hst.tuples(hst.integers(1, 6), hst.integers(1, 6)),
    elements=hst.floats(0, 1),
)


@settings(max_examples=60, deadline=None)
@given(trajectories, hst.randoms())
def test_map_properties(probs, rnd):
    dmap = build_map(_log(probs))
    assert np.all((dmap.confidence >= 0) & (dmap.confidence <= 1))
    assert np.all((dmap.variability >= 0) & (dmap.variability <= 0.5))

    perm = list(range(probs.shape[0]))
    rnd.shuffle(perm)
    permuted = build_map(_log(probs[perm]))
    np.testing.assert_array_equal(permuted.confidence, dmap.confidence[perm])
    np.testing.assert_array_equal(permuted.variability, dmap.variability[perm])

    flattened = build_map(_log(np.repeat(dmap.confidence[:, None], probs.shape[1], axis=1)))
    np.testing.assert_allclose(flattened.confidence, dmap.confidence, atol=1e-12)
    assert np.all(flattened.variability == 0)


def test_export_round_trip(tmp_path):
    dmap = build_map(_log([[0.1, 0.2], [0.5, 0.5], [0.123456789, 0.9]]))
    emb = np.random.default_rng(0).normal(size=(3, 4))
    path = tmp_path / "map.csv"
    export_map(dmap, emb, path, clusters=[0, 1, 0], labels=[2, 2, 1])
    lines = path.read_text().splitlines()
    assert lines[0] == "id,confidence,variability,pc1,pc2,cluster,label"
    assert len(lines) == 4
    back = read_map_csv(path)
    np.testing.assert_allclose(back.confidence, dmap.confidence, atol=1e-6)


def test_export_without_clusters(tmp_path):
    dmap = build_map(_log([[0.1], [0.2]]))
    path = tmp_path / "map.csv"
    export_map(dmap, np.zeros((2, 3)), path)
    rows = [line.split(",") for line in path.read_text().splitlines()[1:]]
    assert all(r[5] == "-1" for r in rows)
    assert all(float(r[3]) == 0.0 and float(r[4]) == 0.0 for r in rows)


def test_pca_degenerate_and_variance_order():
    assert np.all(pca_2d(np.ones((5, 3))) == 0)
    rng = np.random.default_rng(1)
    x = rng.normal(size=(200, 3)) * [5.0, 1.0, 0.1]
    pcs = pca_2d(x)
    assert pcs[:, 0].var() > pcs[:, 1].var()
    # first axis recovers the dominant coordinate
    assert abs(np.corrcoef(pcs[:, 0], x[:, 0])[0, 1]) > 0.99


def test_supervised_trajectory_separable():
    rng = np.random.default_rng(0)
    x = np.vstack([rng.normal(-3, 0.3, size=(15, 2)), rng.normal(3, 0.3, size=(15, 2))])
    ds = Dataset(x, [0] * 15 + [1] * 15)
    log = supervised_trajectory(ds, ClassifierConfig(epochs=60, dropout=0.0))
    assert log.probs.shape == (30, 60)
    assert np.all(log.probs[:, -1] > 0.9)
    assert ds.oracle.count("learn-map") == 1
    assert build_map(log, "learn").source == "learn"


def test_supervised_trajectory_errors():
    with pytest.raises(ConfigError):
        supervised_trajectory(Dataset(np.zeros((2, 1)), [0, 1]), ClassifierConfig(epochs=0))
    with pytest.raises(MissingLabels):
        supervised_trajectory(Dataset(np.zeros((2, 1))), ClassifierConfig(epochs=1))
