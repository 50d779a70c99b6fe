import numpy as np
import pytest

from mdmt.data import gen_synthetic
from mdmt.errors import ConfigError, StateError
from mdmt.memory import MemoryStore, sample_ref_batch, store_mem
from mdmt.nn import forward, init_network


@pytest.fixture
def setup():
    tr, _ = gen_synthetic(5, 6, 2, 0.2, seed=0)  # 10 samples
    net = init_network([6, 8, 4], seed=1)
    return tr, net


def test_quota_must_be_positive(setup):
    tr, net = setup
    with pytest.raises(ConfigError):
        store_mem(MemoryStore(3), 0, tr, net, quota=0)


def test_store_deterministic(setup):
    tr, net = setup
    a, b = MemoryStore(3), MemoryStore(3)
    store_mem(a, 0, tr, net, seed=42)
    store_mem(b, 0, tr, net, seed=42)
    assert np.array_equal(a.tasks[0].inputs, b.tasks[0].inputs)
    assert len(a) == 3
    # drawn without replacement
    assert len({row.tobytes() for row in a.tasks[0].inputs}) == 3


def test_representation_equals_forward(setup):
    tr, net = setup
    store = MemoryStore(4)
    mem = store_mem(store, 0, tr, net, seed=1)
    recomputed = forward(net.copy(), mem.inputs)
    np.testing.assert_allclose(mem.representations, recomputed, atol=1e-12, rtol=0)


def test_representations_frozen(setup):
    tr, net = setup
    store = MemoryStore(4)
    mem = store_mem(store, 0, tr, net, seed=1)
    before = mem.representations.copy()
    net.layers[0].weight += 1.0
    assert np.array_equal(mem.representations, before)
    with pytest.raises(ValueError):
        mem.representations[0, 0] = 5.0


def test_quota_larger_than_dataset(setup, caplog):
    tr, net = setup
    store = MemoryStore(50)
    store_mem(store, 0, tr, net, seed=0)
    assert len(store) == len(tr)
    assert "exceeds" in caplog.text


def test_memory_size_after_tasks(setup):
    tr, net = setup
    store = MemoryStore(3)
    for k in range(4):
        store_mem(store, k, tr, net, seed=k)
    assert len(store) == 4 * 3
    with pytest.raises(StateError):
        store_mem(store, 0, tr, net)


def test_sample_empty_store():
    with pytest.raises(StateError):
        sample_ref_batch(MemoryStore(3), 2, np.random.default_rng(0))


def test_sample_single_entry(setup):
    tr, net = setup
    store = MemoryStore(1)
    store_mem(store, 0, tr, net, seed=0)
    x, y, k, f = sample_ref_batch(store, 4, np.random.default_rng(0))
    assert x.shape == (4, 6)
    assert all(np.array_equal(row, store.tasks[0].inputs[0]) for row in x)
    assert set(k.tolist()) == {0}


def test_sample_task_balance(setup):
    tr, net = setup
    store = MemoryStore(5)
    store_mem(store, 0, tr, net, seed=0)
    store_mem(store, 1, tr, net, seed=1)
    _, _, k, _ = sample_ref_batch(store, 10_000, np.random.default_rng(3))
    assert abs(np.mean(k == 0) - 0.5) < 0.02


def test_sample_alignment_and_determinism(setup):
    tr, net = setup
    store = MemoryStore(5)
    store_mem(store, 0, tr, net, seed=0)
    store_mem(store, 1, tr, net, seed=1)
    a = sample_ref_batch(store, 7, np.random.default_rng(11))
    b = sample_ref_batch(store, 7, np.random.default_rng(11))
    for u, v in zip(a, b):
        assert np.array_equal(u, v)
    x, y, k, f = a
    for xi, fi in zip(x, f):
        np.testing.assert_allclose(forward(net, xi[None], cache=False)[0], fi, atol=1e-12)


def test_representation_smaller_than_input_default_mnist():
    net = init_network([784, 256, 256], seed=0)
    assert net.feature_dim < net.input_dim
