import numpy as np
import pytest

from sheafcast.errors import InvalidParameterError, ShapeMismatchError
from sheafcast.model import ForecastModel, ModelConfig

from oracles import finite_difference_grads, relative_errors


def _edges():
    return np.array([[0, 1], [1, 2], [2, 3], [3, 0], [0, 2], [1, 3]])


def _model(ablation="full", seed=1, **kw):
    base = dict(stalk_dim=6, map_dim=6, rounds=2, normalize=True, field_width=8)
    base.update(kw)
    cfg = ModelConfig(ablation=ablation, **base)
    return ForecastModel.init(_edges(), 4, cfg, seed=seed)


def test_forward_shapes_and_determinism():
    model = _model()
    rng = np.random.default_rng(0)
    ctx = rng.normal(size=(4, 12))
    a = model.predict(ctx, 7)
    b = model.predict(ctx, 7)
    assert a.shape == (4, 7)
    np.testing.assert_array_equal(a, b)
    _, delta = model.forward(ctx, 3)
    assert delta.data.shape == (6, 6)


def test_context_shape_is_validated():
    model = _model()
    with pytest.raises(ShapeMismatchError):
        model.predict(np.zeros((5, 12)), 4)


def test_ablation_parameter_sets():
    full = _model("full")
    graph = _model("graph")
    no_lstm = _model("no_lstm")
    assert set(full.parameters()) == {
        "lstm.w_x", "lstm.w_h", "lstm.bias",
        "sheaf.rho_src", "sheaf.rho_dst", "sheaf.attention",
        "field.w1", "field.b1", "field.w2", "field.b2"}
    assert not any(k.startswith("sheaf.") for k in graph.parameters())
    assert not any(k.startswith("lstm.") for k in no_lstm.parameters())
    # frozen identity maps in the graph ablation
    eye = np.broadcast_to(np.eye(6), (6, 6, 6))
    np.testing.assert_array_equal(graph.sheaf.rho_src.data, eye)


def test_graph_ablation_requires_square_maps():
    with pytest.raises(InvalidParameterError):
        ModelConfig(ablation="graph", stalk_dim=6, map_dim=4)


def test_no_lstm_uses_raw_window_stalks():
    model = _model("no_lstm", stalk_dim=6, map_dim=6)
    ctx = np.arange(48, dtype=float).reshape(4, 12)
    stalks = model.stalks(ctx).data
    np.testing.assert_array_equal(stalks, ctx[:, -6:])


def test_state_free_field_gives_straight_line_trajectories():
    model = _model(field_state_free=True)
    ctx = np.random.default_rng(1).normal(size=(4, 12))
    pred = model.predict(ctx, 5)
    steps = np.diff(np.concatenate([ctx[:, -1:], pred], axis=1), axis=1)
    # constant per-node slope: every step equals the first one
    np.testing.assert_allclose(steps, np.broadcast_to(steps[:, :1], steps.shape),
                               rtol=1e-9, atol=1e-12)


def test_full_pipeline_gradients_match_finite_differences():
    from sheafcast.graphs import PriorGraph
    from sheafcast.training import total_loss

    model = _model(stalk_dim=3, map_dim=3, field_width=4, rounds=2)
    rng = np.random.default_rng(2)
    ctx = rng.normal(size=(4, 5))
    hor = rng.normal(size=(4, 3))
    prior = PriorGraph(edges=tuple(map(tuple, _edges()[:4])), scores=(1.0,) * 4,
                       lag_order=2, top_k=4, n_nodes=4)
    params = model.parameters()

    def loss_fn():
        pred, delta = model.forward(ctx, 3)
        return total_loss(pred, hor, delta, prior, 1e-3, 1e-2,
                          model.sheaf.edges)

    for p in params.values():
        p.grad = None
    loss_fn().backward()
    numeric = finite_difference_grads(lambda: loss_fn().data, params)
    for name, p in params.items():
        errs = relative_errors(p.grad, numeric[name])
        assert errs.max() <= 1e-3, f"{name}: {errs.max():.2e}"
