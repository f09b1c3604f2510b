import numpy as np
import pytest
import scipy.sparse as sp
from scipy.special import expit

from graphxc.cluster import assignment_matrix
from graphxc.infer import Predictor, game_external, gameify_scores
from graphxc.model import DocumentEncoder, EmbeddingBlock
from graphxc.ops import Param
from graphxc.shortlist import Shortlister


def make_predictor(
    rng,
    n_labels=30,
    n_clusters=6,
    beam=3,
    dim=8,
    vocab=12,
    identity_graphs=False,
    graph_density=0.3,
    dtype=np.float64,
):
    enc = DocumentEncoder(
        embeddings=Param(rng.standard_normal((dim, vocab)).astype(dtype)),
        block=EmbeddingBlock.identity(dim, dtype),
    )
    enc.block.weight.value = (rng.standard_normal((dim, dim)) * 0.2).astype(dtype)
    enc.block.gain.value = np.asarray(0.9, dtype=dtype)
    clusters = [np.asarray(c) for c in np.array_split(rng.permutation(n_labels), n_clusters)]
    clusters = [np.sort(c) for c in clusters]
    if identity_graphs:
        g = None
        g_m = None
    else:
        g = sp.csr_matrix(
            rng.random((n_labels, n_labels)) * (rng.random((n_labels, n_labels)) < graph_density)
            + np.eye(n_labels)
        )
        g_m = sp.csr_matrix(
            rng.random((n_clusters, n_clusters)) * (rng.random((n_clusters, n_clusters)) < 0.5)
            + np.eye(n_clusters)
        )
    sl = Shortlister(
        clusters=clusters,
        assignment=assignment_matrix(clusters, n_labels),
        meta_classifiers=rng.standard_normal((n_clusters, dim)).astype(dtype),
        beam=beam,
        rerank_graph=g_m,
    )
    w = rng.standard_normal((n_labels, dim)).astype(dtype)
    return Predictor(encoder=enc, classifiers=w, shortlister=sl, graph=g, topk=5)


def reference_predict(pred, docs, k):
    """Independent dense re-implementation of the prediction pipeline."""
    sl = pred.shortlister
    n_labels = pred.n_labels
    n_clusters = sl.n_clusters
    e = pred.encoder.embeddings.value
    gain = float(pred.encoder.block.gain.value)
    r_mat = pred.encoder.block.weight.value
    lab2c = sl.label_to_cluster
    g = None if pred.graph is None else np.asarray(pred.graph.todense())
    g_m = None if sl.rerank_graph is None else np.asarray(sl.rerank_graph.todense())
    results = []
    for i in range(docs.shape[0]):
        x = np.asarray(docs[i].todense()).ravel()
        x0 = e @ x
        x_hat = np.maximum(gain * x0 + r_mat @ np.maximum(x0, 0), 0)
        meta = sl.meta_classifiers @ x_hat
        top = sorted(range(n_clusters), key=lambda c: (-meta[c], c))[: sl.beam]
        p_tilde = np.zeros(n_clusters)
        p_tilde[top] = expit(meta[top])
        p = p_tilde if g_m is None else g_m @ p_tilde
        top2 = sorted(range(n_clusters), key=lambda c: (-p[c], c))[: sl.beam]
        p_final = np.zeros(n_clusters)
        p_final[top2] = p[top2]
        chosen = set(top2)
        r_tilde = np.zeros(n_labels)
        for l in range(n_labels):
            if lab2c[l] in chosen:
                r_tilde[l] = expit(float(pred.classifiers[l] @ x_hat))
        r = r_tilde if g is None else g @ r_tilde
        s = np.zeros(n_labels)
        for l in range(n_labels):
            if lab2c[l] in chosen:
                s[l] = r[l] * p_final[lab2c[l]]
        ranked = sorted((l for l in range(n_labels) if s[l] > 0), key=lambda l: (-s[l], l))[:k]
        results.append([(l, s[l]) for l in ranked])
    return results


def docs_for(rng, n, vocab, dtype=np.float64):
    return sp.random(n, vocab, density=0.4, random_state=np.random.RandomState(rng.integers(1 << 31)), format="csr", dtype=dtype)


class TestPredictMatchesReference:
    @pytest.mark.parametrize("identity", [True, False])
    def test_full_pipeline_against_dense_reference(self, identity):
        rng = np.random.default_rng(0)
        pred = make_predictor(rng, identity_graphs=identity)
        docs = docs_for(rng, 12, 12)
        got = pred.predict(docs, k=4)
        ref = reference_predict(pred, docs, 4)
        for i in range(12):
            lo, hi = got.indptr[i], got.indptr[i + 1]
            got_pairs = sorted(
                zip(got.indices[lo:hi].tolist(), got.data[lo:hi].tolist()),
                key=lambda t: (-t[1], t[0]),
            )
            assert [l for l, _ in got_pairs] == [l for l, _ in ref[i]]
            np.testing.assert_allclose(
                [v for _, v in got_pairs], [v for _, v in ref[i]], rtol=1e-9, atol=1e-12
            )

    def test_beam_equals_clusters_identity_graphs_is_dense_ranking(self):
        rng = np.random.default_rng(1)
        pred = make_predictor(rng, n_labels=40, n_clusters=8, beam=8, identity_graphs=True)
        docs = docs_for(rng, 10, 12)
        got = pred.predict(docs, k=6)
        x_hat = pred.embed(docs)
        meta = expit(x_hat @ pred.shortlister.meta_classifiers.T)
        label_scores = expit(x_hat @ pred.classifiers.T)
        joint = label_scores * meta[:, pred.shortlister.label_to_cluster]
        for i in range(10):
            expect = np.argsort(-joint[i], kind="stable")[:6]
            lo, hi = got.indptr[i], got.indptr[i + 1]
            order = np.argsort(-got.data[lo:hi], kind="stable")
            np.testing.assert_array_equal(got.indices[lo:hi][order], expect)
            np.testing.assert_allclose(
                got.data[lo:hi][order], joint[i][expect], rtol=1e-9
            )

    def test_batching_invariant(self):
        # the single-query path sums graph rows in a different order than
        # the batched sparse product, so allow last-bit differences
        rng = np.random.default_rng(2)
        pred = make_predictor(rng)
        docs = docs_for(rng, 9, 12)
        a = pred.predict(docs, k=3, batch=1)
        b = pred.predict(docs, k=3, batch=64)
        np.testing.assert_array_equal(a.indices, b.indices)
        np.testing.assert_array_equal(a.indptr, b.indptr)
        np.testing.assert_allclose(a.data, b.data, rtol=1e-12, atol=1e-14)


class TestPredictionShape:
    def test_scores_nonincreasing_and_distinct(self):
        rng = np.random.default_rng(3)
        pred = make_predictor(rng)
        docs = docs_for(rng, 1, 12)
        labels, scores = pred.predict_one(docs, k=5)
        assert len(set(labels.tolist())) == len(labels)
        assert (np.diff(scores) <= 1e-15).all()

    def test_topk_larger_than_live_labels(self):
        rng = np.random.default_rng(4)
        pred = make_predictor(rng, n_labels=12, n_clusters=6, beam=1, identity_graphs=True)
        docs = docs_for(rng, 1, 12)
        labels, _ = pred.predict_one(docs, k=50)
        # only one cluster of two labels is live
        assert len(labels) == 2


class TestGameifyHandInstance:
    def test_rare_label_outranks_via_correlation(self):
        # three singleton clusters; label 2 has no direct score but inherits
        # half of each of the other labels' scores through the graph
        r_tilde = np.array([0.6, 0.4, 0.0])
        p = np.array([0.5, 0.5, 0.5])
        g = sp.csr_matrix(np.array([[1.0, 0, 0], [0, 1.0, 0], [0.5, 0.5, 0]]))
        s = gameify_scores(r_tilde, p, g, np.arange(3))
        assert s[2] == pytest.approx(0.25)
        assert s[1] == pytest.approx(0.2)
        assert s[2] > s[1]

    def test_identity_graph_keeps_scores(self):
        r_tilde = np.array([0.3, 0.9])
        p = np.array([1.0, 0.5])
        s = gameify_scores(r_tilde, p, None, np.array([0, 1]))
        np.testing.assert_allclose(s, [0.3, 0.45])


class TestPredictDense:
    def test_matches_sigmoid_ranking(self):
        rng = np.random.default_rng(5)
        pred = make_predictor(rng, n_labels=20)
        docs = docs_for(rng, 6, 12)
        out = pred.predict_dense(docs, k=4)
        x_hat = pred.embed(docs)
        ref = expit(x_hat @ pred.classifiers.T)
        for i in range(6):
            expect = np.argsort(-ref[i], kind="stable")[:4]
            lo, hi = out.indptr[i], out.indptr[i + 1]
            assert sorted(out.indices[lo:hi].tolist()) == sorted(expect.tolist())


class TestGameExternal:
    def test_no_graphs_identity(self):
        rng = np.random.default_rng(6)
        scores = sp.random(5, 9, density=0.4, random_state=1, format="csr")
        out = game_external(scores)
        assert np.allclose((out - scores).toarray(), 0.0)

    def test_label_graph_expansion_matches_dense(self):
        rng = np.random.default_rng(7)
        scores = sp.random(4, 6, density=0.5, random_state=2, format="csr")
        g = sp.csr_matrix(rng.random((6, 6)))
        out = np.asarray(game_external(scores, g=g).todense())
        ref = (np.asarray(g.todense()) @ np.asarray(scores.todense()).T).T
        np.testing.assert_allclose(out, ref, atol=1e-12)

    def test_full_rerank_hand_instance(self):
        # 3 labels, singleton clusters; external scores double as cluster
        # scores; the cluster graph pulls cluster 2 into the beam
        scores = sp.csr_matrix(np.array([[0.9, 0.5, 0.0]]))
        assignment = sp.identity(3, format="csr")
        g_m = sp.csr_matrix(np.array([[1.0, 0, 0], [0, 1.0, 0], [1.0, 0, 1.0]]))
        out = np.asarray(
            game_external(
                scores, g=None, assignment=assignment, cluster_graph=g_m, beam=2
            ).todense()
        )
        # beam keeps clusters 0 (p=0.9) and 2 (p=0.9); label 1 is dropped
        assert out[0, 0] == pytest.approx(0.9 * 0.9)
        assert out[0, 1] == 0.0

    def test_rerank_improves_cluster_recall_on_correlated_scores(self):
        rng = np.random.default_rng(8)
        n, n_labels, n_clusters, beam = 40, 32, 8, 2
        clusters = [np.arange(i * 4, (i + 1) * 4) for i in range(n_clusters)]
        assignment = assignment_matrix(clusters, n_labels)
        lab2c = np.repeat(np.arange(n_clusters), 4)
        # each point truly belongs to a pair of correlated clusters (2b, 2b+1)
        # but the external model only scores the even cluster's labels
        truth_rows = []
        data, ri, ci = [], [], []
        for i in range(n):
            b = rng.integers(0, 4)
            truth_rows.append({int(l) for l in clusters[2 * b]} | {int(l) for l in clusters[2 * b + 1]})
            for l in clusters[2 * b]:
                ri.append(i)
                ci.append(int(l))
                data.append(float(0.8 + 0.2 * rng.random()))
        scores = sp.csr_matrix((data, (ri, ci)), shape=(n, n_labels))
        pair = np.zeros((n_clusters, n_clusters))
        label_pair = np.zeros((n_labels, n_labels))
        for b in range(4):
            pair[2 * b, 2 * b + 1] = pair[2 * b + 1, 2 * b] = 1.0
            for l in clusters[2 * b]:
                label_pair[l + 4, l] = 1.0  # odd-cluster label tied to its twin
        g_m = sp.csr_matrix(pair + np.eye(n_clusters))
        g = sp.csr_matrix(label_pair + np.eye(n_labels))

        def cluster_recall(mat):
            hits = 0
            total = 0
            for i, t in enumerate(truth_rows):
                row = np.asarray(mat[i].todense()).ravel()
                live = {int(c) for c in np.unique(lab2c[np.flatnonzero(row)])}
                tc = {int(c) for c in np.unique(lab2c[sorted(t)])}
                hits += len(live & tc)
                total += len(tc)
            return hits / total

        before = cluster_recall(scores)
        after = cluster_recall(
            game_external(scores, g=g, assignment=assignment, cluster_graph=g_m, beam=beam)
        )
        assert after >= before
        assert after == pytest.approx(1.0)
