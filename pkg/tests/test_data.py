import gzip
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import mnist_paths
from ondev_lct.data import (
    IDX_IMAGES_MAGIC,
    IDX_LABELS_MAGIC,
    STATS_SCHEMA,
    Dataset,
    Partition,
    PartitionSpec,
    dirichlet_partition,
    encode_cifar,
    encode_idx,
    iid_partition,
    largest_remainder,
    load_cifar_binary,
    load_idx,
    manifest,
    parse_cifar,
    parse_idx,
    partition_stats,
    stats_csv,
    synth_dataset,
    write_idx,
)
from ondev_lct.errors import ConfigError, FormatError, PartitionError


def write_mnist_pair(tmp_path, n=5, gz=False):
    gen = np.random.default_rng(0)
    imgs = gen.integers(0, 256, (n, 28, 28), dtype=np.uint8)
    labels = gen.integers(0, 10, n, dtype=np.uint8)
    ip, lp = tmp_path / "img", tmp_path / "lab"
    if gz:
        ip, lp = tmp_path / "img.gz", tmp_path / "lab.gz"
        ip.write_bytes(gzip.compress(encode_idx(imgs)))
        lp.write_bytes(gzip.compress(encode_idx(labels)))
    else:
        write_idx(ip, imgs)
        write_idx(lp, labels)
    return ip, lp, imgs, labels


# -- IDX ------------------------------------------------------------------

def test_idx_magic_constants():
    assert IDX_IMAGES_MAGIC == 0x00000803 and IDX_LABELS_MAGIC == 0x00000801
    assert encode_idx(np.zeros((2, 3, 4), np.uint8))[:4] == b"\x00\x00\x08\x03"


@pytest.mark.parametrize("gz", [False, True])
def test_load_idx_standardizes(tmp_path, gz):
    ip, lp, imgs, labels = write_mnist_pair(tmp_path, gz=gz)
    ds = load_idx(ip, lp)
    assert ds.images.shape == (5, 28, 28, 1) and ds.images.dtype == np.float32
    np.testing.assert_allclose(ds.images[..., 0], (imgs / 255.0 - 0.1307) / 0.3081, rtol=1e-5, atol=1e-6)
    assert np.array_equal(ds.labels, labels)


def test_load_idx_errors(tmp_path):
    ip, lp, imgs, labels = write_mnist_pair(tmp_path)
    with pytest.raises(FormatError):
        load_idx(lp, ip)  # swapped magic numbers
    trunc = tmp_path / "trunc"
    trunc.write_bytes(ip.read_bytes()[:-7])
    with pytest.raises(FormatError):
        load_idx(trunc, lp)
    short = tmp_path / "short"
    write_idx(short, labels[:3])
    with pytest.raises(FormatError):
        load_idx(ip, short)
    bad_gz = tmp_path / "bad.gz"
    bad_gz.write_bytes(b"not gzip at all")
    with pytest.raises(FormatError):
        load_idx(bad_gz, lp)
    with pytest.raises(OSError):
        load_idx(tmp_path / "missing", lp)


@given(st.lists(st.integers(1, 5), min_size=1, max_size=3), st.integers(0, 2**31 - 1))
def test_idx_codec_round_trip(dims, seed):
    arr = np.random.default_rng(seed).integers(0, 256, dims, dtype=np.uint8)
    assert np.array_equal(parse_idx(encode_idx(arr)), arr)


def test_real_mnist_train_split():
    paths = mnist_paths()
    if paths is None:
        pytest.skip("MNIST files not present; run scripts/fetch_mnist.sh")
    ds = load_idx(paths[0], paths[1])
    assert len(ds) == 60_000
    assert abs(float(ds.images.mean())) < 1e-3 and abs(float(ds.images.std()) - 1) < 1e-3


# -- CIFAR ----------------------------------------------------------------

def test_cifar_round_trip_and_label_byte(tmp_path):
    gen = np.random.default_rng(0)
    imgs = gen.integers(0, 256, (2, 32, 32, 3), dtype=np.uint8)
    buf = encode_cifar(imgs, [7, 2])
    assert buf[0] == 7 and buf[3073] == 2
    raw, labels = parse_cifar(buf, 1)
    assert np.array_equal(raw, imgs) and labels.tolist() == [7, 2]
    coarse = encode_cifar(imgs, [55, 9], coarse=[1, 2])
    raw100, fine = parse_cifar(coarse, 2)
    assert fine.tolist() == [55, 9] and np.array_equal(raw100, imgs)
    (tmp_path / "b.bin").write_bytes(buf)
    ds = load_cifar_binary([tmp_path / "b.bin", tmp_path / "b.bin"])
    assert ds.images.shape == (4, 32, 32, 3) and ds.num_classes == 10
    mean = np.array(manifest()["datasets"]["cifar10"]["mean"], np.float32)
    std = np.array(manifest()["datasets"]["cifar10"]["std"], np.float32)
    np.testing.assert_allclose(ds.images[0], (imgs[0] / 255.0 - mean) / std, rtol=1e-5, atol=1e-5)


def test_cifar_size_error(tmp_path):
    p = tmp_path / "bad.bin"
    p.write_bytes(b"\x00" * 3075)
    with pytest.raises(FormatError):
        load_cifar_binary(p)


def test_manifest_entries():
    m = manifest()
    assert m["format"] == "lct-dataset-manifest-v1"
    assert m["datasets"]["mnist"]["shape"] == [28, 28, 1]
    assert m["datasets"]["emnist_balanced"]["num_classes"] == 47


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 4, 4, 1), np.float32), np.array([0, 10]), 10)
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 4, 4), np.float32), np.array([0, 1]), 10)


# -- synthetic ------------------------------------------------------------

def test_synth_determinism_and_balance():
    a, b = synth_dataset(128, seed=3), synth_dataset(128, seed=3)
    assert np.array_equal(a.images, b.images) and np.array_equal(a.labels, b.labels)
    counts = a.class_counts()
    assert counts.min() >= 12 and counts.max() <= 13
    test = synth_dataset(128, seed=3, split="test")
    assert not np.array_equal(test.images, a.images)


def test_synth_linear_probe_separable():
    train = synth_dataset(2000, seed=0)
    test = synth_dataset(1000, seed=0, split="test")
    X = np.c_[train.images.reshape(len(train), -1), np.ones(len(train))]
    Y = np.eye(10)[train.labels]
    W, *_ = np.linalg.lstsq(X, Y, rcond=None)
    Xt = np.c_[test.images.reshape(len(test), -1), np.ones(len(test))]
    assert ((Xt @ W).argmax(1) == test.labels).mean() >= 0.95


# -- partitioning ---------------------------------------------------------

def balanced_labels(per_class, k=10):
    return np.repeat(np.arange(k), per_class)


@given(st.integers(1, 12), st.floats(0.05, 100.0), st.integers(0, 10_000), st.integers(0, 5))
def test_partition_complete_and_disjoint(clients, beta, seed, min_samples):
    labels = np.random.default_rng(seed).integers(0, 10, 300)
    spec = PartitionSpec(clients, beta, seed, min_samples_per_client=min_samples, max_retries=200)
    try:
        part = dirichlet_partition(labels, spec)
    except PartitionError:
        return
    allidx = np.concatenate(part.clients)
    assert np.array_equal(np.sort(allidx), np.arange(300))
    assert all(len(c) >= min_samples for c in part.clients)
    assert all(np.all(np.diff(c) > 0) for c in part.clients)


def test_partition_determinism():
    labels = balanced_labels(50)
    spec = PartitionSpec(5, 0.5, seed=11)
    assert dirichlet_partition(labels, spec).to_json() == dirichlet_partition(labels, spec).to_json()
    assert dirichlet_partition(labels, spec).to_json() != dirichlet_partition(labels, PartitionSpec(5, 0.5, 12)).to_json()


def test_partition_huge_beta_is_uniform():
    labels = balanced_labels(1000)
    part = dirichlet_partition(labels, PartitionSpec(2, 1e6, seed=0))
    hist = np.array(partition_stats(part, labels, 10)["histogram"])
    assert np.all(np.abs(hist - 500) <= 25)


def test_partition_heterogeneity_direction():
    labels = balanced_labels(5000)
    med = {}
    for beta in (0.1, 0.5, 5.0):
        vals = [partition_stats(dirichlet_partition(labels, PartitionSpec(10, beta, s)), labels, 10)["max_share_median"]
                for s in range(3)]
        med[beta] = float(np.median(vals))
    assert med[0.1] > med[0.5] > med[5.0]


def test_partition_errors():
    with pytest.raises(PartitionError):
        dirichlet_partition(np.zeros(5, np.int64), PartitionSpec(3, 0.5, 0, min_samples_per_client=2))
    with pytest.raises(PartitionError):
        # enough samples in total, but a single class at tiny beta lands on one client every draw
        dirichlet_partition(np.zeros(10, np.int64), PartitionSpec(2, 1e-3, 0, min_samples_per_client=5, max_retries=5))
    with pytest.raises(ConfigError):
        PartitionSpec(0, 0.5)
    with pytest.raises(ConfigError):
        PartitionSpec(3, 0.0)


def test_largest_remainder():
    assert largest_remainder(10, np.array([0.55, 0.45])).tolist() == [6, 4]
    assert largest_remainder(3, np.array([1 / 3] * 3)).tolist() == [1, 1, 1]
    assert largest_remainder(5, np.array([0.5, 0.5])).tolist() == [3, 2]


@given(st.integers(0, 500), st.lists(st.floats(0.0, 1.0), min_size=1, max_size=10), )
def test_largest_remainder_sums(total, raw):
    p = np.array(raw)
    if p.sum() == 0:
        return
    p = p / p.sum()
    c = largest_remainder(total, p)
    assert c.sum() == total and np.all(np.abs(c - total * p) < 1 + 1e-9)


def test_stats_contract():
    labels = balanced_labels(100)
    part = dirichlet_partition(labels, PartitionSpec(6, 0.3, 1))
    stats = partition_stats(part, labels, 10)
    hist = np.array(stats["histogram"])
    assert hist.sum(axis=1).tolist() == stats["sizes"] == part.sizes
    assert set(stats) == set(STATS_SCHEMA["required"])
    again = json.loads(json.dumps(stats))
    assert again == stats
    rows = stats_csv(stats).strip().split("\n")
    assert rows[0].startswith("client,size,class_0") and len(rows) == 7
    assert all(sum(map(int, r.split(",")[2:])) == int(r.split(",")[1]) for r in rows[1:])


def test_iid_partition_max_share_near_uniform():
    labels = balanced_labels(1000)
    stats = partition_stats(iid_partition(len(labels), 5, 0), labels, 10)
    assert all(abs(v - 0.1) < 0.03 for v in stats["max_share"])
    assert all(e > 9.9 for e in stats["effective_classes"])


def test_partition_json_round_trip():
    labels = balanced_labels(20)
    part = dirichlet_partition(labels, PartitionSpec(3, 1.0, 4, min_samples_per_client=1))
    back = Partition.from_json(part.to_json())
    assert back.spec == part.spec
    assert all(np.array_equal(a, b) for a, b in zip(back.clients, part.clients))
    doc = json.loads(part.to_json())
    assert set(doc) == {"spec", "clients"}
