import numpy as np
import pytest

from xdiff.autodiff import CapacityError, CrossDual
from xdiff.mlp import ActivationError, MlpConfig, forward, init_mlp
from xdiff.salience import (
    CamOptions,
    FeatureGrid,
    SalienceTensor,
    grad_cam,
    hessian_cam,
    render_heatmap,
    salience_document,
    symmetrize,
    taylor_cam,
    top_interactions,
)

RAW = CamOptions(square=False, symmetrize=False)
SQUARED = CamOptions(square=True, symmetrize=False)


def bilinear(rows):
    """F = sum_p x0p * x1p over however many coordinates the grid has."""
    acc = rows[0][0] * rows[1][0]
    for p in range(1, len(rows[0])):
        acc = acc + rows[0][p] * rows[1][p]
    return acc


def test_grad_cam_bilinear_local_returns_f():
    grid = FeatureGrid(np.array([[1.0, 2.0, 3.0], [0.5, -1.0, 2.0]]))
    want = float(np.dot(grid.x[0], grid.x[1]))
    assert grad_cam(bilinear, grid, 0, RAW) == pytest.approx(want, rel=1e-12)


def test_grad_cam_constant_function_is_zero():
    grid = FeatureGrid(np.array([[1.0], [2.0], [3.0]]))
    for i in range(3):
        assert grad_cam(lambda rows: 7.0, grid, i, RAW) == 0.0


def test_grad_cam_global_picks_up_other_gradients():
    # F = x00 alone; the global k-sum routes vector 0's gradient to i=1
    grid = FeatureGrid(np.array([[4.0], [9.0]]))
    opts = CamOptions(local_k=False, square=False, symmetrize=False)
    assert grad_cam(lambda rows: rows[0][0], grid, 1, opts) == pytest.approx(9.0)
    # locally vector 1 has no gradient at all
    assert grad_cam(lambda rows: rows[0][0], grid, 1, RAW) == 0.0


def test_grad_cam_rectify():
    grid = FeatureGrid(np.array([[2.0], [1.0]]))
    f = lambda rows: -3.0 * rows[0][0]
    assert grad_cam(f, grid, 0, RAW) == pytest.approx(-6.0)
    assert grad_cam(f, grid, 0, CamOptions(square=False, rectify=True)) == 0.0


def test_grad_cam_index_range():
    grid = FeatureGrid(np.ones((2, 2)))
    with pytest.raises(IndexError):
        grad_cam(bilinear, grid, 2)


def test_hessian_cam_bilinear_worked_example():
    grid = FeatureGrid(np.array([[1.0, 2.0, 3.0], [0.5, -1.0, 2.0]]))
    t = hessian_cam(bilinear, grid, SQUARED)
    assert t.values[0, 1] == 36.0  # (1+2+3)^2, exact
    assert t.values[1, 0] == (0.5 - 1.0 + 2.0) ** 2
    assert t.values[0, 0] == 0.0 and t.values[1, 1] == 0.0
    # default symmetrization folds the two squared cells together
    sym = hessian_cam(bilinear, grid)
    assert sym.values[0, 1] == sym.values[1, 0] == pytest.approx(36.0 + 2.25)
    assert sym.symmetrized and sym.diagonal_zeroed


def test_additive_model_has_exactly_zero_salience():
    def additive(rows):
        acc = 0.0
        for row in rows:
            s = row[0]
            for v in row[1:]:
                s = s + v
            acc = acc + s * s  # nonlinear per vector, additive across
        return acc

    grid = FeatureGrid(np.random.default_rng(0).normal(size=(4, 3)))
    t = hessian_cam(additive, grid, SQUARED)
    off = t.values[~np.eye(4, dtype=bool)]
    assert (off == 0.0).all()


def test_taylor_order1_equals_grad_cam():
    model = init_mlp(MlpConfig(input_dim=6, hidden=(8,), seed=0))
    grid = FeatureGrid(np.random.default_rng(1).uniform(-1, 1, (3, 2)))
    t = taylor_cam(model, grid, 1, RAW)
    for i in range(3):
        assert t.values[i] == grad_cam(model, grid, i, RAW)


def test_taylor_order3_trilinear_worked_example():
    grid = FeatureGrid(np.array([[1.7], [0.3], [-2.0]]))
    f = lambda rows: rows[0][0] * rows[1][0] * rows[2][0]
    t = taylor_cam(f, grid, 3, SQUARED)
    assert t.values[0, 1, 2] == pytest.approx(1.7**2, rel=1e-12)
    assert t.values[1, 0, 2] == pytest.approx(0.3**2, rel=1e-12)
    assert t.values[0, 0, 1] == 0.0  # repeated index: not a set
    # symmetrized form folds all six permutation cells into the smallest
    sym = taylor_cam(f, grid, 3)
    want = 2 * (1.7**2 + 0.3**2 + 2.0**2)
    assert sym.values[0, 1, 2] == pytest.approx(want, rel=1e-12)
    assert sym.values[1, 0, 2] == 0.0


def test_taylor_order2_is_hessian_cam():
    model = init_mlp(MlpConfig(input_dim=6, hidden=(7, 4), seed=4))
    grid = FeatureGrid(np.random.default_rng(2).uniform(-1, 1, (2, 3)))
    a = taylor_cam(model, grid, 2)
    b = hessian_cam(model, grid)
    np.testing.assert_array_equal(a.values, b.values)


def test_mlp_and_callable_routes_agree():
    """The batched lattice pass over an Mlp and the per-tuple seeded
    pass over the same network as a closure give the same tensor."""
    model = init_mlp(MlpConfig(input_dim=6, hidden=(9, 5), seed=6))

    def as_fn(rows):
        flat = [v for row in rows for v in row]
        return forward(model, flat)[0]

    grid = FeatureGrid(np.random.default_rng(3).uniform(-1, 1, (3, 2)))
    a = hessian_cam(model, grid, SQUARED)
    b = hessian_cam(as_fn, grid, SQUARED)
    np.testing.assert_allclose(a.values, b.values, rtol=1e-9, atol=1e-12)


def test_salience_matches_finite_difference_of_importance():
    """Differentiating the order-1 importance numerically reproduces the
    directed pair salience."""
    model = init_mlp(MlpConfig(input_dim=6, hidden=(8, 4), seed=11))
    rng = np.random.default_rng(5)
    grid = FeatureGrid(rng.uniform(-1, 1, (3, 2)))
    t = hessian_cam(model, grid, RAW)
    h = 1e-4
    for i in range(3):
        for j in range(3):
            if i == j:
                continue
            fd = 0.0
            for m in range(2):
                bumped = grid.x.copy()
                bumped[j, m] += h
                up = grad_cam(model, FeatureGrid(bumped), i, RAW)
                bumped[j, m] -= 2 * h
                dn = grad_cam(model, FeatureGrid(bumped), i, RAW)
                fd += (up - dn) / (2 * h)
            assert t.values[i, j] == pytest.approx(fd, rel=1e-3, abs=1e-8)


def test_symmetrize_is_idempotent():
    vals = np.array([[0.0, 3.0], [5.0, 0.0]])
    t = SalienceTensor(2, vals)
    once = symmetrize(t)
    twice = symmetrize(once)
    np.testing.assert_array_equal(once.values, [[0.0, 8.0], [8.0, 0.0]])
    assert twice is once


def test_sum_before_square_option():
    grid = FeatureGrid(np.array([[1.0, 2.0, 3.0], [0.5, -1.0, 2.0]]))
    t = hessian_cam(bilinear, grid, CamOptions(sum_before_square=True))
    assert t.values[0, 1] == pytest.approx((6.0 + 1.5) ** 2)


def test_top_interactions_ranking():
    t = SalienceTensor(2, np.array([[0.0, 5.0, 1.0], [3.0, 0.0, 1.0], [1.0, 1.0, 0.0]]))
    rows = top_interactions(t, 10)
    assert rows[0] == ((0, 1), 5.0)  # strongest permutation cell wins
    assert [s for s, _ in rows] == [(0, 1), (0, 2), (1, 2)]
    assert top_interactions(t, 1) == [((0, 1), 5.0)]
    assert top_interactions(t, 0) == []
    with pytest.raises(ValueError):
        top_interactions(t, -1)


def test_top_interactions_zero_tensor_and_threshold():
    t = SalienceTensor(2, np.zeros((3, 3)))
    assert top_interactions(t, 10, threshold=0.0) == []
    rows = top_interactions(t, 10)
    assert [s for s, _ in rows] == [(0, 1), (0, 2), (1, 2)]  # lexicographic ties


def test_argmax_stable_under_positive_scaling():
    model = init_mlp(MlpConfig(input_dim=8, hidden=(6,), seed=8))

    def f(rows):
        flat = [v for row in rows for v in row]
        return forward(model, flat)[0]

    grid = FeatureGrid(np.random.default_rng(7).uniform(-1, 1, (4, 2)))
    base = top_interactions(hessian_cam(f, grid), 6)
    scaled = top_interactions(hessian_cam(lambda r: 3.0 * f(r), grid), 6)
    assert [s for s, _ in base] == [s for s, _ in scaled]
    for (_, v1), (_, v2) in zip(base, scaled):
        assert v2 == pytest.approx(9.0 * v1, rel=1e-9)


def test_relu_and_capacity_errors():
    relu = init_mlp(MlpConfig(input_dim=4, hidden=(5,), activation="relu"))
    grid = FeatureGrid(np.ones((2, 2)))
    with pytest.raises(ActivationError):
        hessian_cam(relu, grid)
    assert isinstance(grad_cam(relu, grid, 0), float)  # order 1 is fine
    with pytest.raises(CapacityError):
        taylor_cam(bilinear, FeatureGrid(np.ones((9, 1))), 9)
    with pytest.raises(ValueError, match="order"):
        taylor_cam(bilinear, grid, 0)


def test_grid_validation():
    with pytest.raises(ValueError, match="2-d"):
        FeatureGrid(np.ones(4))
    with pytest.raises(ValueError, match="at least 2"):
        FeatureGrid(np.ones((1, 3)))
    with pytest.raises(ValueError, match="finite"):
        FeatureGrid(np.array([[1.0, np.nan], [0.0, 1.0]]))
    with pytest.raises(ValueError, match="tile"):
        FeatureGrid(np.ones((4, 2)), layout=(3, 2))
    g = FeatureGrid(np.ones((6, 2)), layout=(2, 3))
    assert (g.n, g.d) == (6, 2)


def test_model_grid_size_mismatch():
    model = init_mlp(MlpConfig(input_dim=5, hidden=(3,)))
    with pytest.raises(ValueError, match="flattens"):
        hessian_cam(model, FeatureGrid(np.ones((2, 2))))


def test_tensor_validation():
    with pytest.raises(ValueError):
        SalienceTensor(2, np.zeros(3))
    with pytest.raises(ValueError):
        SalienceTensor(2, np.zeros((2, 3)))
    with pytest.raises(ValueError):
        SalienceTensor(2, np.full((2, 2), np.inf))


def test_render_heatmap_deterministic(tmp_path):
    vals = np.zeros((4, 4))
    vals[0, 1] = vals[1, 0] = 2.5
    t = SalienceTensor(2, vals, symmetrized=True)
    p1, p2 = tmp_path / "a.svg", tmp_path / "b.svg"
    render_heatmap(t, p1, layout=(2, 2))
    render_heatmap(t, p2, layout=(2, 2))
    assert p1.read_bytes() == p2.read_bytes()
    svg = p1.read_text()
    assert svg.count("stroke-dasharray") == 1  # one linked pair drawn


def test_render_heatmap_zero_tensor_has_no_boxes(tmp_path):
    t = SalienceTensor(2, np.zeros((4, 4)))
    path = tmp_path / "z.svg"
    render_heatmap(t, path, layout=(2, 2))
    assert "stroke-dasharray" not in path.read_text()


def test_render_heatmap_errors(tmp_path):
    with pytest.raises(ValueError, match="order-2"):
        render_heatmap(SalienceTensor(1, np.zeros(3)), tmp_path / "x.svg")
    with pytest.raises(ValueError, match="tile"):
        render_heatmap(SalienceTensor(2, np.zeros((4, 4))), tmp_path / "y.svg", layout=(3, 2))


def test_threads_do_not_change_values():
    grid = FeatureGrid(np.random.default_rng(9).uniform(-1, 1, (4, 2)))

    def f(rows):
        acc = rows[0][0] * rows[1][0]
        for r in rows[2:]:
            acc = acc + r[0] * r[1]
        return acc

    a = taylor_cam(f, grid, 2, SQUARED, threads=1)
    b = taylor_cam(f, grid, 2, SQUARED, threads=4)
    np.testing.assert_array_equal(a.values, b.values)


def test_salience_document_shape():
    t = SalienceTensor(2, np.array([[0.0, 4.0], [4.0, 0.0]]), symmetrized=True)
    doc = salience_document(t, CamOptions(), top=3)
    assert doc["order"] == 2
    assert doc["tuples"] == [{"set": [0, 1], "salience": 4.0}]
    assert set(doc["options"]) == {
        "local_k", "square", "symmetrize", "zero_diagonal",
        "sum_before_square", "rectify",
    }
