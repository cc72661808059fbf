import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ondev_lct import fedavg
from ondev_lct.data import PartitionSpec, iid_partition, synth_dataset
from ondev_lct.errors import ConfigError, DimensionError, ProtocolError
from ondev_lct.fedavg import ClientSampler, ClientState, FedRunConfig, aggregate, local_update, sample_clients
from ondev_lct.model import LCTConfig, LCTModel, get_flat_params
from ondev_lct.tensor import Rng
from ondev_lct.training import TrainConfig, evaluate, train_epochs

SMALL = LCTConfig(embed_dim=32, heads=2, stem_channels=16, bottleneck_shrink=16, input_shape=(12, 12, 1),
                  num_bottlenecks=2)


def task(n, split="train"):
    return synth_dataset(n, 10, 12, 12, 1, seed=0, task_seed=0, split=split, signal=1.5)


# -- sampling -------------------------------------------------------------

def test_sampler_all():
    for r in range(3):
        assert sample_clients("all", 10, r, Rng(0)) == list(range(10))


def test_sampler_fixed():
    ids = sample_clients("fixed:10", 50, 1, Rng(0))
    assert len(set(ids)) == 10 and all(0 <= i < 50 for i in ids)
    assert ids == sample_clients(10, 50, 1, Rng(0))
    assert ids != sample_clients(10, 50, 2, Rng(0))


def test_sampler_range_covers_all_counts():
    counts = {len(sample_clients("range:2-10", 10, r, Rng(3))) for r in range(1000)}
    assert counts == set(range(2, 11))


def test_sampler_errors():
    with pytest.raises(ConfigError):
        sample_clients("fixed:11", 10, 0, Rng(0))
    with pytest.raises(ConfigError):
        sample_clients("range:0-3", 10, 0, Rng(0))
    with pytest.raises(ConfigError):
        sample_clients("range:2-11", 10, 0, Rng(0))
    with pytest.raises(ConfigError):
        ClientSampler.parse("some")


@given(st.integers(1, 30), st.integers(0, 100), st.integers(0, 10_000))
def test_sampled_ids_distinct_and_counted(n, r, seed):
    k = max(1, n // 2)
    ids = sample_clients(ClientSampler("fixed", k=k), n, r, Rng(seed))
    assert len(ids) == len(set(ids)) == k and ids == sorted(ids)


# -- aggregation ----------------------------------------------------------

def test_aggregate_hand_cases():
    z, f = np.zeros(3), np.full(3, 4.0)
    assert np.array_equal(aggregate([(z, 5), (f, 5)]), np.full(3, 2.0))
    assert np.array_equal(aggregate([(z, 1), (f, 3)]), np.full(3, 3.0))
    v = np.array([0.1, 0.7, 1e-30], np.float32)
    assert aggregate([(v, 7)]) is v


def test_aggregate_errors():
    with pytest.raises(ProtocolError):
        aggregate([])
    with pytest.raises(DimensionError):
        aggregate([(np.zeros(3), 1), (np.zeros(4), 1)])
    with pytest.raises(ProtocolError):
        aggregate([(np.zeros(3), 0), (np.zeros(3), 1)])


vectors = st.integers(1, 6).flatmap(
    lambda k: st.lists(st.tuples(st.lists(st.floats(-1e3, 1e3), min_size=5, max_size=5), st.integers(1, 1000)),
                       min_size=k, max_size=k))


@given(vectors, st.randoms())
def test_aggregate_algebra(updates, rnd):
    ups = [(np.array(v), n) for v, n in updates]
    out = aggregate(ups)
    shuffled = list(ups)
    rnd.shuffle(shuffled)
    assert np.array_equal(aggregate(shuffled), out)
    stack = np.stack([v for v, _ in ups])
    assert np.all(out >= stack.min(0)) and np.all(out <= stack.max(0))
    same = [(ups[0][0], n) for _, n in ups]
    assert np.array_equal(aggregate(same), ups[0][0])


# -- local update ---------------------------------------------------------

def test_local_update_zero_epochs_is_identity():
    data = task(40)
    flat = get_flat_params(LCTModel(SMALL, 0))
    client = ClientState(0, np.arange(20))
    out, n = local_update(flat, client, data, TrainConfig(epochs=0), LCTModel(SMALL, 1), Rng(0))
    assert n == 20 and np.array_equal(out, flat) and out is not flat


def test_local_update_does_not_mutate_global():
    data = task(40)
    flat = get_flat_params(LCTModel(SMALL, 0))
    keep = flat.copy()
    local_update(flat, ClientState(0, np.arange(40)), data, TrainConfig(epochs=1, batch_size=16),
                 LCTModel(SMALL, 0), Rng(0))
    assert np.array_equal(flat, keep)


def test_identical_clients_identical_updates():
    data = task(40)
    flat = get_flat_params(LCTModel(SMALL, 0))
    cfg = TrainConfig(epochs=1, batch_size=16)
    a, _ = local_update(flat, ClientState(0, np.arange(40)), data, cfg, LCTModel(SMALL, 0), Rng(5))
    b, _ = local_update(flat, ClientState(3, np.arange(40)), data, cfg, LCTModel(SMALL, 9), Rng(5))
    assert np.array_equal(a, b)


def test_empty_client_is_skipped(caplog):
    flat = get_flat_params(LCTModel(SMALL, 0))
    assert local_update(flat, ClientState(2, np.zeros(0, np.int64)), task(10), TrainConfig(),
                        LCTModel(SMALL, 0), Rng(0)) is None
    assert "no samples" in caplog.text


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_local_update_descends(seed):
    data = task(64)
    idx = np.arange(0, 64, 2)
    shard = data.subset(idx)
    model = LCTModel(SMALL, seed)
    flat = get_flat_params(model)
    before, _ = evaluate(model, shard, label_smoothing=0.1)
    out, _ = local_update(flat, ClientState(0, idx), data, TrainConfig(epochs=2, batch_size=16, lr=3e-3),
                          model, Rng(seed))
    after, _ = evaluate(model, shard, label_smoothing=0.1)
    assert after < before


# -- runs -----------------------------------------------------------------

def small_run_cfg(**kw):
    base = dict(model=SMALL, partition=PartitionSpec(4, 5.0, 0, min_samples_per_client=5), rounds=3,
                local_epochs=1, train=TrainConfig(batch_size=32, lr=3e-3), seed=0)
    return FedRunConfig(**{**base, **kw})


def test_fed_config_halves_batch_and_checks_sampler():
    cfg = small_run_cfg()
    assert cfg.local_train().batch_size == 16 and cfg.local_train().epochs == 1
    assert small_run_cfg(halve_batch=False).local_train().batch_size == 32
    with pytest.raises(ConfigError):
        small_run_cfg(clients_per_round="fixed:5")
    with pytest.raises(ConfigError):
        small_run_cfg(rounds=0)


def test_run_record_contract():
    train, test = task(96), task(50, "test")
    per_round = "range:2-3"
    res = fedavg.run(small_run_cfg(clients_per_round=per_round), train, test)
    assert len(res.records) == 3
    for r, rec in enumerate(res.records, start=1):
        assert rec.round == r
        assert 2 <= len(rec.clients) <= 3 and len(set(rec.clients)) == len(rec.clients)
        assert all(c > 0 for c in rec.counts)
    assert sum(len(c) for c in res.partition.clients) == 96


def test_run_is_deterministic_and_stateless():
    train, test = task(80), task(40, "test")
    cfg = small_run_cfg()
    a = fedavg.run(cfg, train, test)
    b = fedavg.run(cfg, train, test)
    assert a.to_jsonl() == b.to_jsonl()
    assert np.array_equal(get_flat_params(a.model), get_flat_params(b.model))


def test_run_flushes_each_round_before_failure(monkeypatch):
    train, test = task(80), task(40, "test")
    seen = []
    real = fedavg.local_update
    calls = {"n": 0}

    def flaky(*args, **kw):
        calls["n"] += 1
        if calls["n"] > 4:  # second round
            raise RuntimeError("client crashed")
        return real(*args, **kw)

    monkeypatch.setattr(fedavg, "local_update", flaky)
    with pytest.raises(RuntimeError):
        fedavg.run(small_run_cfg(), train, test, on_round=seen.append)
    assert [r.round for r in seen] == [1]


def test_single_client_matches_centralized_training():
    train, test = task(64), task(20, "test")
    mcfg = SMALL.replace(dtype="f64")
    cfg = small_run_cfg(model=mcfg, partition=PartitionSpec(1, 0.5, 0, 1), rounds=1, local_epochs=3,
                        train=TrainConfig(batch_size=32, lr=1e-3, dtype="f64"), seed=7)
    fed = fedavg.run(cfg, train, test)
    central = LCTModel(mcfg, Rng(7))
    train_epochs(central, train, cfg.local_train(), ClientState(0, np.arange(64)).stream(7, 1))
    np.testing.assert_allclose(get_flat_params(fed.model), get_flat_params(central), rtol=0, atol=1e-12)


def test_single_client_multi_round_matches_restarted_centralized():
    train, test = task(48), task(20, "test")
    mcfg = SMALL.replace(dtype="f64")
    cfg = small_run_cfg(model=mcfg, partition=PartitionSpec(1, 0.5, 0, 1), rounds=3, local_epochs=1,
                        train=TrainConfig(batch_size=16, lr=1e-3, dtype="f64"), seed=2)
    fed = fedavg.run(cfg, train, test)
    central = LCTModel(mcfg, Rng(2))
    for r in (1, 2, 3):  # optimizer state restarts every round in both
        train_epochs(central, train, cfg.local_train(), ClientState(0, np.arange(48)).stream(2, r))
    np.testing.assert_allclose(get_flat_params(fed.model), get_flat_params(central), rtol=0, atol=1e-12)


def test_iid_clients_learn_quickly():
    train, test = task(400), task(200, "test")
    cfg = small_run_cfg(rounds=2, local_epochs=2, train=TrainConfig(batch_size=32, lr=3e-3))
    part = iid_partition(len(train), 4, 0)
    res = fedavg.run(cfg, train, test, partition=part)
    assert res.records[1].test_acc - res.initial_acc > 0.20


def test_server_statistics_switch():
    train, test = task(64), task(20, "test")
    res = fedavg.run(small_run_cfg(rounds=1, aggregate_bn_stats=False), train, test)
    init = LCTModel(SMALL, Rng(0))
    for (name, a), (_, b) in zip(res.model.stat_arrays(), init.stat_arrays()):
        assert np.array_equal(a, b), name


def test_summarize_reports_both_statistics():
    curves = {0: [0.1, 0.5, 0.6, 0.7, 0.8, 0.9], 1: [0.1, 0.2, 0.3, 0.4, 0.5, 0.95], 2: [0.0] * 6}
    s = fedavg.summarize(curves)
    assert s["run_medians"] == {"0": 0.7, "1": 0.4, "2": 0.0}
    assert s["best_run_median"] == 0.7
    assert s["median_of_run_medians"] == 0.4
    # across-run median per round over rounds 2..6 is [0.2, 0.3, 0.4, 0.5, 0.9]
    assert s["best_round_median"] == 0.9
    with pytest.raises(ProtocolError):
        fedavg.summarize({})
