import numpy as np
import pytest
import scipy.sparse as sp
from sklearn.base import clone

from graphxc.estimator import GraphXCClassifier
from graphxc.validation import check_binary_labels, check_sparse_rows

from .synth import separable_dataset


@pytest.fixture(scope="module")
def fitted():
    ds = separable_dataset(0, n_docs=300, n_labels=64, vocab=160)
    clf = GraphXCClassifier(
        embed_dim=32,
        n_clusters=8,
        beam_size=4,
        batch_size=128,
        epochs_embed=20,
        epochs_shortlist=10,
        epochs_rank=10,
        lr_embed=0.05,
        lr_rank=0.2,
        decay_interval=5.0,
        seed=0,
    )
    clf.fit(ds.docs, ds.labels, label_text=ds.label_text)
    return clf, ds


class TestSklearnProtocol:
    def test_get_set_params_round_trip(self):
        clf = GraphXCClassifier(embed_dim=24, seed=7)
        params = clf.get_params()
        assert params["embed_dim"] == 24
        clf2 = GraphXCClassifier().set_params(**params)
        assert clf2.get_params() == params

    def test_clone(self):
        clf = GraphXCClassifier(n_clusters=32, fusion="sum")
        c2 = clone(clf)
        assert c2.get_params() == clf.get_params()

    def test_unfitted_raises(self):
        with pytest.raises(RuntimeError, match="not fitted"):
            GraphXCClassifier().decision_function(sp.csr_matrix((1, 4)))


class TestFitPredict:
    def test_training_set_precision(self, fitted):
        clf, ds = fitted
        assert clf.score(ds.docs, ds.labels) >= 0.9

    def test_decision_function_topk(self, fitted):
        clf, ds = fitted
        scores = clf.decision_function(ds.docs[:10], k=3)
        assert scores.shape == (10, ds.n_labels)
        assert (np.diff(scores.indptr) <= 3).all()

    def test_predict_binary_indicator(self, fitted):
        clf, ds = fitted
        out = clf.predict(ds.docs[:5])
        assert set(np.unique(out.data).tolist()) <= {1.0}

    def test_predict_topk_ranked(self, fitted):
        clf, ds = fitted
        ids, vals = clf.predict_topk(ds.docs[:4], k=4)
        assert ids.shape == (4, 4)
        for row in vals:
            live = row[row > 0]
            assert (np.diff(live) <= 1e-12).all()

    def test_dense_input_accepted(self, fitted):
        clf, ds = fitted
        dense = np.asarray(ds.docs[:3].todense())
        scores = clf.decision_function(dense)
        assert scores.shape[0] == 3


class TestFitValidation:
    def test_label_text_required(self):
        ds = separable_dataset(1, n_docs=50, n_labels=16, vocab=64)
        with pytest.raises(ValueError, match="label_text"):
            GraphXCClassifier().fit(ds.docs, ds.labels)

    def test_mismatched_rows(self):
        ds = separable_dataset(1, n_docs=50, n_labels=16, vocab=64)
        with pytest.raises(ValueError, match="rows|samples"):
            GraphXCClassifier().fit(ds.docs[:20], ds.labels, label_text=ds.label_text)

    def test_label_text_width_checked(self):
        ds = separable_dataset(1, n_docs=50, n_labels=16, vocab=64)
        bad = sp.csr_matrix((16, 32))
        with pytest.raises(ValueError, match="columns"):
            GraphXCClassifier().fit(ds.docs, ds.labels, label_text=bad)


class TestValidationHelpers:
    def test_check_sparse_rows_sorts_and_bounds(self):
        m = sp.csr_matrix((np.array([1.0, 2.0]), np.array([3, 1]), np.array([0, 2])), shape=(1, 5))
        out = check_sparse_rows(m)
        assert list(out[0].indices) == [1, 3]

    def test_check_sparse_rows_rejects_1d(self):
        with pytest.raises(ValueError, match="2-dimensional"):
            check_sparse_rows(np.ones(4))

    def test_binary_labels_binarized(self):
        y = sp.csr_matrix(np.array([[0.0, 2.5], [1.0, 0.0]]))
        out = check_binary_labels(y, 2)
        assert set(out.data.tolist()) == {1.0}
