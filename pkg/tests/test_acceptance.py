"""End-to-end acceptance criteria.

Each test is tagged ``acceptance(number, title)``; the terminal summary
prints one PASS/FAIL line per criterion. The MNIST criteria read
``data/mnist_10k.csv.gz`` (see ``scripts/fetch_mnist.py``).
"""
import csv
import time

import numpy as np
import pytest
from scipy.stats import spearmanr

from pumap.cli import main
from pumap.datasets import blobs, load_mnist, mnist_path, moons
from pumap.embed import UMAP, Embedding, full_cross_entropy, optimize, OptimizerSchedule, init_embedding
from pumap.fuzzy import (
    calibration_sums,
    fit_kernel_params,
    fuzzy_simplicial_set,
    smooth_knn_dist,
    symmetrize,
    directed_membership,
)
from pumap.knn import exact_knn, nearest_neighbors
from pumap.metrics import (
    distance_correlation,
    kmeans,
    kmeans_nmi,
    knn_accuracy,
    rnx_auc,
    silhouette,
    trustworthiness,
)
from pumap.parametric import (
    EdgeBatch,
    LossWeights,
    ParametricModel,
    ParametricSchedule,
    ParametricUMAP,
    composite_loss,
    fit_posthoc_decoder,
    indirect_mse_fit,
    inverse_transform,
    train_parametric,
    transform,
    umap_pair_loss,
)
from oracles import (
    brute_cross_entropy,
    brute_force_knn,
    dense_union,
    dist_matrix,
    finite_difference_check,
    kmeans_nmi_oracle,
    nmi_oracle,
    pearson_oracle,
    rnx_oracle,
    silhouette_oracle,
    trust_oracle,
)

acceptance = pytest.mark.acceptance
KERNEL = fit_kernel_params(0.1, 1.0)
SEEDS = range(5)

needs_mnist = pytest.mark.skipif(not mnist_path().exists(), reason="MNIST file not present")


@pytest.fixture(scope="module")
def mnist5k():
    x, y = load_mnist(5000)
    graph, _ = fuzzy_simplicial_set(nearest_neighbors(x, 15, seed=0))
    return x, y, graph


def held_out_knn(z_train, y_train, z_test, y_test):
    idx = np.arange(len(z_train) + len(z_test))
    return knn_accuracy(
        np.vstack([z_train, z_test]),
        np.concatenate([y_train, y_test]),
        k=1,
        split=(idx[: len(z_train)], idx[len(z_train) :]),
    )


# -- 1 ---------------------------------------------------------------------


@acceptance(1, "oracle equivalence of graph, loss and metric code")
def test_oracle_equivalence():
    start = time.perf_counter()
    for seed in range(3):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(40, 101))
        x = rng.normal(size=(n, 5))
        z = rng.normal(size=(n, 2))
        labels = rng.integers(0, 4, n)

        knn = exact_knn(x, 10)
        idx, dist = brute_force_knn(x, 10)
        assert np.array_equal(knn.indices, idx)
        assert np.max(np.abs(knn.distances - dist)) <= 1e-10

        directed = directed_membership(knn, smooth_knn_dist(knn)).toarray()
        sym = symmetrize(directed).to_dense()
        assert np.max(np.abs(sym - dense_union(directed))) <= 1e-10

        graph, _ = fuzzy_simplicial_set(knn)
        got = full_cross_entropy(graph, Embedding(z, KERNEL))
        assert abs(got - brute_cross_entropy(graph, z, KERNEL)) <= 1e-10 * max(1.0, abs(got))

        assert abs(trustworthiness(x, z, 5) - trust_oracle(x, z, 5)) <= 1e-10
        assert abs(rnx_auc(x, z) - rnx_oracle(x, z)) <= 1e-10
        assert abs(silhouette(z, labels) - silhouette_oracle(z, labels.tolist())) <= 1e-10

        assert abs(kmeans_nmi(z, labels) - kmeans_nmi_oracle(z, labels)) <= 1e-10

        dx, dz = dist_matrix(x), dist_matrix(z)
        iu = np.triu_indices(n, 1)
        expected = pearson_oracle(dx[iu].tolist(), dz[iu].tolist())
        assert abs(distance_correlation(x, z) - expected) <= 1e-10
    assert time.perf_counter() - start < 10


# -- 2 ---------------------------------------------------------------------


def _micro(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(4, 3))
    model = ParametricModel.build(3, 2, (6, 6), KERNEL, decoder=True, n_classes=2, classifier_hidden=(5,), seed=seed)
    for _, net in model.networks():
        for layer in net.layers:
            layer.bias[:] = rng.normal(scale=0.5, size=layer.bias.shape)
    return x, model


@acceptance(2, "finite-difference gradient suite through the full network")
def test_gradient_suite():
    start = time.perf_counter()
    worst = {}
    for seed in range(3):
        x, model = _micro(seed)
        order = [1, 2, 3, 0]
        positives_only = EdgeBatch(x, x[order], x, np.zeros((4, 0), dtype=int), x)
        full = EdgeBatch(x, x[order], x[[2, 3, 0, 1]], np.array([[0, 1], [1, 2], [2, 3], [3, 0]]), x, x[:2], np.array([0, 1]))
        cases = {
            "umap attractive": (positives_only, LossWeights(umap=1)),
            "umap attractive+repulsive": (full, LossWeights(umap=1)),
            "reconstruction": (full, LossWeights(umap=0, reconstruction=1)),
            "pearson": (full, LossWeights(umap=0, global_correlation=1)),
            "classifier": (full, LossWeights(umap=0, classifier=1)),
            "composite": (full, LossWeights(1, 0.5, 0.3, 2)),
        }
        for name, (batch, weights) in cases.items():
            _, _, grads = composite_loss(model, batch, weights)
            err = finite_difference_check(
                lambda: composite_loss(model, batch, weights, with_grads=False)[0], model.parameters(), grads
            )
            worst[name] = max(worst.get(name, 0.0), err)

        # the repulsive part in isolation, with respect to the negative coordinates
        rng = np.random.default_rng(seed)
        zh, zt, zn = rng.normal(size=(4, 2)), rng.normal(size=(4, 2)), rng.normal(size=(4, 3, 2))
        _, _, _, gneg = umap_pair_loss(zh, zt, zn, KERNEL)
        err = finite_difference_check(lambda: umap_pair_loss(zh, zt, zn, KERNEL)[0], [zn], [gneg])
        worst["umap repulsive"] = max(worst.get("umap repulsive", 0.0), err)
    print({k: f"{v:.2e}" for k, v in worst.items()})
    assert all(v < 1e-4 for v in worst.values()), worst
    assert time.perf_counter() - start < 30


# -- 3 ---------------------------------------------------------------------


def _calibration_datasets():
    yield "moons", moons(1000, seed=0)[0]
    yield "blobs", blobs(500, seed=0)[0]
    yield "blobs-wide", blobs(1000, n_features=50, centers=10, seed=1)[0]
    if mnist_path().exists():
        yield "mnist", load_mnist()[0]


@acceptance(3, "bandwidth calibration hits log2(k) on every row")
def test_sigma_calibration():
    for name, x in _calibration_datasets():
        for k in (5, 15):
            knn = nearest_neighbors(x, k, seed=0)
            params = smooth_knn_dist(knn)
            resid = np.abs(calibration_sums(knn, params) - np.log2(k))
            assert resid.max() < 1e-5, (name, k, resid.max(), int(params.degenerate.sum()))


# -- 4 ---------------------------------------------------------------------


@acceptance(4, "moons: non-parametric and parametric 1-NN accuracy >= 0.99")
def test_moons_end_to_end():
    x, y = moons(1000, seed=0)
    x_test, y_test = moons(1000, seed=1)

    start = time.perf_counter()
    z = UMAP(random_state=0).fit_transform(x)
    np_time = time.perf_counter() - start
    np_acc = knn_accuracy(z, y, k=1)

    start = time.perf_counter()
    est = ParametricUMAP(hidden_layers=(100, 100), n_epochs=10, learning_rate=1e-2, random_state=0).fit(x)
    p_time = time.perf_counter() - start
    p_acc = held_out_knn(est.embedding_, y, est.transform(x_test), y_test)

    print(f"non-parametric acc {np_acc:.4f} ({np_time:.1f}s); parametric test acc {p_acc:.4f} ({p_time:.1f}s)")
    assert np_acc >= 0.99 and np_time < 120
    assert p_acc >= 0.99 and p_time < 120


# -- 5 ---------------------------------------------------------------------

MNIST_PARAMETRIC = dict(n_epochs=10, batch_size=32, learning_rate=2e-3)


@needs_mnist
@acceptance(5, "MNIST-10k: parametric and non-parametric quality")
def test_mnist_parametric_matches_nonparametric():
    x, y = load_mnist(10_000)
    start = time.perf_counter()
    knn = nearest_neighbors(x, 15, seed=0)
    graph, _ = fuzzy_simplicial_set(knn)

    z_np = UMAP(random_state=0).fit(x, knn_graph=knn).embedding_
    z_p = ParametricUMAP(random_state=0, **MNIST_PARAMETRIC).fit(x, graph=graph).embedding_

    results = {}
    for name, z, paper_trust in (("umap", z_np, 0.9601), ("parametric", z_p, 0.9573)):
        results[name] = (
            trustworthiness(x, z, 5),
            knn_accuracy(z, y, k=1),
            silhouette(z, y),
            paper_trust,
        )
    elapsed = time.perf_counter() - start
    for name, (t, a, s, _) in results.items():
        print(f"{name}: trust {t:.4f} knn {a:.4f} silhouette {s:.4f}")
    print(f"elapsed {elapsed:.0f}s")
    for name, (t, a, s, paper_trust) in results.items():
        assert abs(t - paper_trust) <= 0.03, name
        assert a >= 0.90, name
        assert s >= 0.40, name
    assert elapsed < 20 * 60


# -- 6 ---------------------------------------------------------------------

GLOBAL_WEIGHTS = (0.0, 0.01, 0.1, 1.0)
GLOBAL_SCHEDULE = dict(n_epochs=5, batch_size=256, learning_rate=1e-2)


@needs_mnist
@acceptance(6, "global correlation weight trades local for global structure")
def test_global_tradeoff(mnist5k):
    x, _, graph = mnist5k
    corr = np.zeros((len(GLOBAL_WEIGHTS), len(SEEDS)))
    trust = np.zeros_like(corr)
    for i, w in enumerate(GLOBAL_WEIGHTS):
        for j, seed in enumerate(SEEDS):
            z = ParametricUMAP(weight_global=w, random_state=seed, **GLOBAL_SCHEDULE).fit(x, graph=graph).embedding_
            corr[i, j] = distance_correlation(x, z, rank=True, seed=seed)
            trust[i, j] = trustworthiness(x, z, 5)
    mean_corr, mean_trust = corr.mean(axis=1), trust.mean(axis=1)
    print("spearman", np.round(mean_corr, 4), "trust", np.round(mean_trust, 4))
    assert np.all(np.diff(mean_corr) >= 0)
    assert mean_trust[0] - mean_trust[-1] >= 0.005


# -- 7 ---------------------------------------------------------------------

AE_SCHEDULE = dict(n_epochs=5, batch_size=256, learning_rate=1e-2)
DECODER_SCHEDULE = dict(n_epochs=50, batch_size=256, learning_rate=1e-3)


@needs_mnist
@acceptance(7, "UMAP/AE hybrid reconstructs at least as well as a post-hoc decoder")
def test_autoencoder_hybrid(mnist5k):
    x, _, graph = mnist5k
    hybrid_mse, posthoc_mse = [], []
    for seed in SEEDS:
        hybrid = ParametricUMAP(decoder=True, random_state=seed, **AE_SCHEDULE).fit(x, graph=graph)
        hybrid_mse.append(np.mean((hybrid.inverse_transform(hybrid.embedding_) - x) ** 2))
        plain = ParametricUMAP(random_state=seed, **AE_SCHEDULE).fit(x, graph=graph)
        sched = ParametricSchedule(seed=seed, **DECODER_SCHEDULE)
        post = fit_posthoc_decoder(plain.model_, x, schedule=sched, seed=seed).model
        posthoc_mse.append(np.mean((inverse_transform(post, transform(post, x)) - x) ** 2))
    print(f"hybrid {np.mean(hybrid_mse):.5f} post-hoc {np.mean(posthoc_mse):.5f}")
    assert np.mean(hybrid_mse) <= np.mean(posthoc_mse)


# -- 8 ---------------------------------------------------------------------


def _ssl_pair(x, y, x_test, y_test, labeled, seed, graph, hidden, schedule):
    partial = np.full_like(y, -1)
    partial[labeled] = y[labeled]
    accs = []
    for weight_umap in (1.0, 0.0):
        est = ParametricUMAP(
            hidden_layers=hidden,
            weight_umap=weight_umap,
            weight_classifier=1.0,
            random_state=seed,
            **schedule,
        ).fit(x, partial, graph=graph)
        accs.append(np.mean(est.predict(x_test) == y_test))
    return accs


def _pick_labels(y, per_class, rng):
    return np.concatenate([rng.choice(np.flatnonzero(y == c), per_class, replace=False) for c in np.unique(y)])


SSL_MOONS_SCHEDULE = dict(n_epochs=10, batch_size=256, learning_rate=1e-2)
SSL_MNIST_SCHEDULE = dict(n_epochs=5, batch_size=256, learning_rate=1e-2)


@needs_mnist
@acceptance(8, "semi-supervised joint training beats classifier-only training")
def test_semi_supervised_gain(mnist5k):
    x, y = moons(1000, seed=0)
    x_test, y_test = moons(1000, seed=1)
    graph, _ = fuzzy_simplicial_set(exact_knn(x, 15))
    moons_wins = []
    for seed in SEEDS:
        labeled = _pick_labels(y, 2, np.random.default_rng(seed))
        joint, alone = _ssl_pair(x, y, x_test, y_test, labeled, seed, graph, (100, 100), SSL_MOONS_SCHEDULE)
        print(f"moons seed {seed}: joint {joint:.3f} classifier-only {alone:.3f}")
        moons_wins.append(joint >= alone)

    mx, my, mgraph = mnist5k
    test_x, test_y = load_mnist(10_000)
    test_x, test_y = test_x[5000:], test_y[5000:]
    mnist_wins = []
    for seed in SEEDS:
        labeled = _pick_labels(my, 64 // 10 + 1, np.random.default_rng(seed))[:64]
        joint, alone = _ssl_pair(mx, my, test_x, test_y, labeled, seed, mgraph, (100, 100, 100), SSL_MNIST_SCHEDULE)
        print(f"mnist seed {seed}: joint {joint:.3f} classifier-only {alone:.3f}")
        mnist_wins.append(joint >= alone)
    assert sum(moons_wins) >= 4
    assert sum(mnist_wins) >= 4


# -- 9 ---------------------------------------------------------------------


@needs_mnist
@acceptance(9, "direct training beats indirect MSE regression at every width")
def test_direct_beats_indirect():
    x, _ = load_mnist(1000)
    knn = exact_knn(x, 15)
    graph, _ = fuzzy_simplicial_set(knn)
    target = UMAP(random_state=0).fit(x, knn_graph=knn).embedding_
    for width in (4, 16, 64):
        direct = ParametricModel.build(x.shape[1], 2, (width,), KERNEL, seed=0)
        train_parametric(graph, x, direct, schedule=ParametricSchedule(n_epochs=50, batch_size=256, learning_rate=1e-2, seed=0))
        indirect = indirect_mse_fit(
            target, x, hidden=(width,), schedule=ParametricSchedule(n_epochs=200, batch_size=64, learning_rate=1e-2, seed=0), seed=0
        ).model
        ce_direct = full_cross_entropy(graph, Embedding(transform(direct, x), KERNEL))
        ce_indirect = full_cross_entropy(graph, Embedding(transform(indirect, x), KERNEL))
        print(f"width {width}: direct {ce_direct:.1f} indirect {ce_indirect:.1f}")
        assert ce_direct < ce_indirect


# -- 10 --------------------------------------------------------------------


@acceptance(10, "parametric transform of 10k rows is >= 100x faster than a refit")
def test_transform_speed(tmp_path):
    assert main(["benchmark", "--n-test", "10000", "--n-samples", "2000", "--epochs", "5", "--output", str(tmp_path)]) == 0
    with open(tmp_path / "timing.csv") as fh:
        rows = {r["stage"]: float(r["seconds"]) for r in csv.DictReader(fh)}
    print(rows)
    assert rows["nonparametric_refit"] / rows["parametric_transform"] >= 100
    assert rows["speedup"] >= 100


# -- 11 --------------------------------------------------------------------


def _outputs(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir()) if p.suffix in (".csv", ".json", ".bin")}


@acceptance(11, "seeded single-threaded runs are byte-identical for every subcommand")
def test_determinism(tmp_path):
    data = tmp_path / "data.csv"
    from pumap.io import save_dataset

    x, y = moons(300, seed=3)
    save_dataset(data, x, y)
    common = ["--seed", "7", "--threads", "1", "--epochs", "3", "--hidden", "16,16"]

    def run(tag):
        base = tmp_path / tag
        steps = {
            "fit": ["fit", "--input", str(data)],
            "fit-parametric": ["fit-parametric", "--input", str(data), "--decoder"],
            "ssl-train": ["ssl-train", "--input", str(data), "--n-labeled", "3"],
            "benchmark": ["benchmark", "--input", str(data), "--n-test", "100"],
        }
        for name, argv in steps.items():
            assert main([*argv, *common, "--output", str(base / name)]) == 0, name
        model = str(base / "fit-parametric" / "model.bin")
        assert main(["transform", "--input", str(data), "--model", model, "--output", str(base / "transform")]) == 0
        emb = str(base / "transform" / "embedding.csv")
        assert main(["inverse", "--input", emb, "--model", model, "--output", str(base / "inverse")]) == 0
        assert main(["metrics", "--input", str(data), "--embedding", emb, "--output", str(base / "metrics")]) == 0
        return {d.name: _outputs(d) for d in base.iterdir()}

    first, second = run("a"), run("b")
    assert set(first) == {"fit", "fit-parametric", "ssl-train", "benchmark", "transform", "inverse", "metrics"}
    for command, files in first.items():
        primary = {"inverse": "reconstruction.csv", "metrics": "metrics.json"}.get(command, "embedding.csv")
        assert primary in files, command
        assert files[primary] == second[command][primary], command
        for name, blob in files.items():
            if name != "timing.csv":  # wall-clock timings
                assert blob == second[command][name], (command, name)
