import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from tagcf import TAGCFRecommender, make_baseline
from tagcf.data import split_dataset
from tagcf.synthetic import generate_synthetic


@pytest.fixture(scope="module")
def fitted():
    syn = generate_synthetic(n_users=60, n_items=50, n_topics=5, interactions_per_user=8, seed=1)
    split = split_dataset(syn.dataset, seed=0)
    ua = np.array([[u, syn.user_topics[u]] for u in range(60)])
    ia = np.array([[i, syn.item_topics[i]] for i in range(50)])
    est = TAGCFRecommender(n_layers=2, embed_dim=8, max_epochs=5, batch_size=64, random_state=3)
    est.fit(split.train, X_val=split.val, ua_edges=ua, ia_edges=ia, n_attrs=5, n_users=60,
            n_items=50)
    return est, split, ua, ia


def test_params_and_clone():
    est = TAGCFRecommender(n_layers=4, gate_mode="softmax")
    params = est.get_params()
    assert params["n_layers"] == 4 and params["gate_mode"] == "softmax"
    c = clone(est)
    assert c.get_params() == params and c is not est
    base = make_baseline(est)
    assert base.ablation == "no_argc" and not base.use_attributes and est.ablation == "full"


def test_unfitted_raises():
    with pytest.raises(NotFittedError):
        TAGCFRecommender().predict([[0, 0]])


def test_fitted_attributes(fitted):
    est, split, *_ = fitted
    assert (est.n_users_, est.n_items_, est.n_attrs_) == (60, 50, 5)
    assert 1 <= est.best_epoch_ <= 5 and len(est.training_log_) >= est.best_epoch_
    assert est.graph_.n_attrs == 5


def test_predict_matches_decision_function(fitted):
    est, split, *_ = fitted
    full = est.decision_function()
    pairs = np.array([[0, 3], [5, 7], [59, 49]])
    np.testing.assert_allclose(est.predict(pairs), full[pairs[:, 0], pairs[:, 1]], rtol=1e-5)
    with pytest.raises(ValueError):
        est.predict([[60, 0]])


def test_recommend_excludes_training(fitted):
    est, split, *_ = fitted
    recs = est.recommend(np.arange(60), k=10)
    train = {(int(u), int(i)) for u, i in split.train}
    assert recs.shape == (60, 10)
    assert not any((u, int(i)) in train for u in range(60) for i in recs[u])
    none = est.recommend([0], k=50, exclude=np.empty((0, 2), int))
    assert sorted(none[0].tolist()) == list(range(50))


def test_score_and_evaluate(fitted):
    est, split, *_ = fitted
    rep = est.evaluate(split.test, exclude=np.concatenate([split.train, split.val]))
    assert set(rep.recall) == {5, 20} and 0 <= rep.recall[20] <= 1
    assert 0 <= est.score(split.test) <= 1


def test_checkpoint_round_trip(fitted, tmp_path):
    est, split, *_ = fitted
    est.save(tmp_path / "m.ckpt")
    back = TAGCFRecommender.from_checkpoint(tmp_path / "m.ckpt", est.graph_)
    np.testing.assert_array_equal(back.decision_function(), est.decision_function())


def test_baseline_ignores_attributes(fitted):
    est, split, ua, ia = fitted
    base = make_baseline(est).set_params(max_epochs=2)
    base.fit(split.train, ua_edges=ua, ia_edges=ia, n_attrs=5, n_users=60, n_items=50)
    assert base.n_attrs_ == 0 and base.best_epoch_ == 2


def test_fit_is_deterministic(fitted):
    est, split, ua, ia = fitted
    again = clone(est).fit(split.train, X_val=split.val, ua_edges=ua, ia_edges=ia, n_attrs=5,
                           n_users=60, n_items=50)
    assert again.embeddings_.weight.tobytes() == est.embeddings_.weight.tobytes()
