"""Network filters, features, loss, gradients, optimizer, and persistence.

Tests verify:
- ETE/ETV filter worked values and brute-force oracle agreement
- feature extraction layout, padding, and relabeling equivariance
- weighted cross-entropy worked values and limits
- analytic gradients against central finite differences (both variants)
- SGD update arithmetic and the descent property
- prediction tie-breaking and monotone-transform invariance
- last-layer export layout (29 rows per class at n_max=7)
- model file round-trips and malformed-file rejection
"""
from __future__ import annotations

import json
import math

import numpy as np
import pytest

from qwalk import (
    CLASSICAL,
    QUANTUM,
    Example,
    ModelFormatError,
    build_line_dataset,
    desymmetrize,
    ete_filter,
    etv_filter,
    export_last_layer,
    extract_features,
    feature_slot,
    forward,
    gradients,
    line_graph,
    load_model,
    loss,
    new_model,
    permute_free_vertices,
    predict,
    save_model,
    score_loss,
    sgd_step,
)

from oracles import brute_ete, brute_ete_from_edges, brute_etv, connected_graphs

PATH4 = np.array([
    [0, 1, 0, 0],
    [1, 0, 1, 0],
    [0, 1, 0, 1],
    [0, 0, 1, 0],
], dtype=float)

K3 = np.array([
    [0, 1, 1],
    [1, 0, 1],
    [1, 1, 0],
], dtype=float)


def _example(labeling, label):
    g = line_graph(len(labeling), labeling)
    if label == QUANTUM:
        return Example(graph=g, label=QUANTUM, classical_hit_time=9.0, quantum_hit_time=7.0)
    return Example(graph=g, label=CLASSICAL, classical_hit_time=3.0, quantum_hit_time=None)


# ====== fixed filters ======


def test_ete_on_path4():
    """Path 1-2-3-4: four edge entries count one neighbor, two count two."""
    out = ete_filter(PATH4)
    values = sorted(out[PATH4 == 1])
    assert values == [1.0, 1.0, 1.0, 1.0, 2.0, 2.0]
    assert np.all(out[PATH4 == 0] == 0)


def test_ete_on_triangle():
    """Every K_3 edge has exactly two neighboring edges."""
    out = ete_filter(K3)
    assert np.all(out[K3 == 1] == 2.0)
    assert np.all(np.diag(out) == 0)


def test_ete_zero_matrix():
    assert np.array_equal(ete_filter(np.zeros((4, 4))), np.zeros((4, 4)))


def test_ete_matches_brute_force():
    rng = np.random.default_rng(3)
    for _ in range(20):
        m = rng.normal(size=(5, 5))
        assert np.allclose(ete_filter(m), brute_ete(m))


def test_ete_matches_edge_list_counts_on_small_graphs():
    """On adjacency input the filter counts neighboring edges exactly."""
    for g in connected_graphs(4):
        a = g.adjacency.astype(float)
        assert np.array_equal(ete_filter(a), brute_ete_from_edges(g.adjacency))


def test_etv_on_desymmetrized_path4():
    out = etv_filter(desymmetrize(PATH4))
    assert np.array_equal(out, [1.0, 2.0, 2.0, 1.0])


def test_etv_on_identity():
    assert np.array_equal(etv_filter(np.eye(5)), np.zeros(5))


def test_etv_on_symmetric_path4():
    """On the raw symmetric adjacency the reduction doubles the degrees."""
    assert np.array_equal(etv_filter(PATH4), [2.0, 4.0, 4.0, 2.0])


def test_etv_matches_brute_force():
    rng = np.random.default_rng(4)
    for _ in range(20):
        m = rng.normal(size=(6, 6))
        assert np.allclose(etv_filter(m), brute_etv(m))


def test_filters_reject_non_square():
    with pytest.raises(ValueError):
        ete_filter(np.zeros((3, 4)))
    with pytest.raises(ValueError):
        etv_filter(np.zeros((3, 4)))


def test_desymmetrize_cases():
    upper = desymmetrize(PATH4)
    assert np.array_equal(upper, np.triu(PATH4))
    assert np.array_equal(desymmetrize(upper), upper)  # idempotent
    rng = np.random.default_rng(5)
    m = rng.normal(size=(4, 4))
    sym = m + m.T
    assert np.array_equal(desymmetrize(sym), np.triu(sym))


# ====== feature extraction ======


def test_feature_slots_are_distinct():
    slots = [0] + [feature_slot(v, f) for v in range(7) for f in (1, 2, 3, 4)]
    assert slots == list(range(29))


def test_features_on_path_132():
    """Middle vertex of line 1-3-2: degree 2, two neighboring edges,
    adjacent to both endpoints."""
    g = line_graph(3, [0, 2, 1])
    f = extract_features(g, n_max=3)
    middle = 2  # the vertex the labeling places between initial and target
    got = [f[feature_slot(middle, k)] for k in (1, 2, 3, 4)]
    assert got == [2.0, 2.0, 1.0, 1.0]
    assert f[0] == 1.0  # bias slot


def test_feature_one_is_degree():
    g = line_graph(5, [3, 0, 4, 1, 2])
    f = extract_features(g, n_max=5)
    degrees = g.adjacency.sum(axis=1)
    got = [f[feature_slot(v, 1)] for v in range(5)]
    assert np.array_equal(got, degrees)


def test_feature_three_marks_the_direct_edge():
    """Feature 3 at the target vertex is the initial-target edge bit."""
    joined = line_graph(3, [0, 1, 2])      # edge {0,1} present
    apart = line_graph(3, [0, 2, 1])       # endpoints separated
    f_joined = extract_features(joined, n_max=3)
    f_apart = extract_features(apart, n_max=3)
    assert f_joined[feature_slot(1, 3)] == 1.0
    assert f_apart[feature_slot(1, 3)] == 0.0


def test_features_zero_padded():
    g = line_graph(4, [0, 1, 2, 3])
    f = extract_features(g, n_max=7)
    assert len(f) == 29
    for v in range(4, 7):
        for k in (1, 2, 3, 4):
            assert f[feature_slot(v, k)] == 0.0


def test_features_reject_oversized_graph():
    g = line_graph(5, [0, 1, 2, 3, 4])
    with pytest.raises(ValueError):
        extract_features(g, n_max=4)


def test_features_are_equivariant_under_relabeling():
    """Permuting free vertices permutes the per-vertex feature blocks."""
    g = line_graph(5, [0, 4, 2, 3, 1])
    perm = [0, 1, 4, 2, 3]
    f = extract_features(g, n_max=5)
    f_perm = extract_features(permute_free_vertices(g, perm), n_max=5)
    assert f_perm[0] == f[0]
    for v in range(5):
        for k in (1, 2, 3, 4):
            assert f_perm[feature_slot(perm[v], k)] == f[feature_slot(v, k)], (
                f"vertex {v}->{perm[v]} feature {k}"
            )


# ====== forward pass ======


def test_forward_zero_weights_gives_zero_scores():
    for variant in ("simple", "full"):
        model = new_model(variant, n_max=4, seed=0)
        zeroed = model.copy()
        for w in zeroed.weights.values():
            w[:] = 0.0
        x = forward(zeroed, line_graph(4, [0, 1, 2, 3]))
        assert np.array_equal(x, [0.0, 0.0])


def test_forward_simple_is_affine_in_features():
    """The simple variant is exactly last-layer-transpose times features."""
    model = new_model("simple", n_max=5, seed=8)
    for labeling in ([0, 1, 2, 3, 4], [2, 0, 3, 1, 4]):
        g = line_graph(5, labeling)
        f = extract_features(g, model.n_max)
        assert np.allclose(forward(model, g), model.weights["last"].T @ f)


def test_forward_full_shapes():
    model = new_model("full", n_max=6, seed=1)
    x = forward(model, line_graph(4, [0, 2, 1, 3]))
    assert x.shape == (2,)
    assert np.all(np.isfinite(x))


# ====== loss ======


def test_loss_uniform_scores():
    """Equal scores cost kappa * ln 2."""
    got = score_loss(np.array([0.0, 0.0]), CLASSICAL, kappas=(0.5, 0.5))
    assert abs(got - 0.5 * math.log(2)) < 1e-12
    # through the model path as well
    model = new_model("simple", n_max=3, seed=0)
    zeroed = model.copy()
    zeroed.weights["last"][:] = 0.0
    ex = _example([0, 1, 2], CLASSICAL)
    assert abs(loss(zeroed, ex, kappas=(0.5, 0.5)) - 0.3466) < 1e-4


def test_loss_worked_example():
    """x = (1, 0), class 0, kappa 0.6 -> 0.6 ln(1 + e^-1)."""
    got = score_loss(np.array([1.0, 0.0]), CLASSICAL, kappas=(0.6, 0.4))
    assert abs(got - 0.6 * math.log(1 + math.exp(-1))) < 1e-12
    assert abs(got - 0.188) < 1e-3


def test_loss_saturates_to_zero():
    got = score_loss(np.array([60.0, 0.0]), CLASSICAL, kappas=(0.5, 0.5))
    assert 0.0 <= got < 1e-12


def test_loss_is_nonnegative():
    rng = np.random.default_rng(12)
    for _ in range(200):
        x = rng.normal(scale=5.0, size=2)
        label = int(rng.integers(2))
        kappa = rng.uniform(0.05, 0.95)
        assert score_loss(x, label, kappas=(kappa, 1 - kappa)) >= 0.0


def test_loss_inverse_weighting_switch():
    x = np.array([0.0, 0.0])
    plain = score_loss(x, QUANTUM, kappas=(0.8, 0.2))
    inverse = score_loss(x, QUANTUM, kappas=(0.8, 0.2), inverse_class_weights=True)
    assert abs(plain - 0.2 * math.log(2)) < 1e-12
    assert abs(inverse - 5.0 * math.log(2)) < 1e-12


# ====== gradients ======


def _finite_difference_check(variant: str, pairs: int, seed: int) -> float:
    """Worst relative error between analytic and central-difference grads."""
    rng = np.random.default_rng(seed)
    labelings = [[0, 1, 2], [0, 2, 1], [2, 0, 1]]
    worst = 0.0
    h = 1e-5
    for k in range(pairs):
        model = new_model(variant, n_max=4, seed=int(rng.integers(1 << 31)), hidden_width=6)
        ex = _example(labelings[k % 3], QUANTUM if k % 2 else CLASSICAL)
        kappas = (0.7, 0.3)
        grads = gradients(model, [ex], kappas=kappas)
        for name, grad in grads.items():
            flat = model.weights[name].reshape(-1)
            gflat = grad.reshape(-1)
            for idx in rng.choice(flat.size, size=min(6, flat.size), replace=False):
                perturbed = model.copy()
                pflat = perturbed.weights[name].reshape(-1)
                pflat[idx] += h
                up = loss(perturbed, ex, kappas=kappas)
                pflat[idx] -= 2 * h
                down = loss(perturbed, ex, kappas=kappas)
                fd = (up - down) / (2 * h)
                denom = max(abs(fd), abs(gflat[idx]), 1.0)
                worst = max(worst, abs(fd - gflat[idx]) / denom)
    return worst


def test_gradients_match_finite_differences_simple():
    worst = _finite_difference_check("simple", pairs=60, seed=100)
    assert worst < 1e-5, f"simple variant: worst relative error {worst:.2e}"


def test_gradients_match_finite_differences_full():
    worst = _finite_difference_check("full", pairs=60, seed=200)
    assert worst < 1e-5, f"full variant: worst relative error {worst:.2e}"


def test_gradients_vanish_when_saturated():
    """Confident correct scores on every batch member kill the gradient."""
    model = new_model("simple", n_max=3, seed=0)
    zeroed = model.copy()
    zeroed.weights["last"][:] = 0.0
    zeroed.weights["last"][0, CLASSICAL] = 40.0  # bias slot drives the margin
    batch = [_example([0, 1, 2], CLASSICAL), _example([2, 0, 1], CLASSICAL)]
    grads = gradients(zeroed, batch, kappas=(0.5, 0.5))
    norm = max(np.abs(g).max() for g in grads.values())
    assert norm < 1e-6, f"saturated gradient norm {norm:.2e}"


def test_gradient_of_duplicated_batch_equals_single():
    model = new_model("full", n_max=4, seed=3)
    ex = _example([0, 2, 1, 3], QUANTUM)
    single = gradients(model, [ex], kappas=(0.5, 0.5))
    tripled = gradients(model, [ex, ex, ex], kappas=(0.5, 0.5))
    for name in single:
        assert np.allclose(single[name], tripled[name], atol=1e-15)


def test_gradient_is_batch_mean():
    model = new_model("simple", n_max=3, seed=9)
    e1 = _example([0, 1, 2], CLASSICAL)
    e2 = _example([0, 2, 1], QUANTUM)
    g1 = gradients(model, [e1], kappas=(0.5, 0.5))["last"]
    g2 = gradients(model, [e2], kappas=(0.5, 0.5))["last"]
    both = gradients(model, [e1, e2], kappas=(0.5, 0.5))["last"]
    assert np.allclose(both, (g1 + g2) / 2.0)


# ====== optimizer ======


def test_sgd_scalar_arithmetic():
    """w=1, grad=2, lr=0.1 -> w=0.8."""
    model = new_model("simple", n_max=3, seed=0)
    base = model.copy()
    base.weights["last"][:] = 0.0
    base.weights["last"][0, 0] = 1.0
    grads = {"last": np.zeros_like(base.weights["last"])}
    grads["last"][0, 0] = 2.0
    stepped = sgd_step(base, grads, lr=0.1)
    assert abs(stepped.weights["last"][0, 0] - 0.8) < 1e-15
    assert np.all(stepped.weights["last"].reshape(-1)[1:] == 0.0)


def test_sgd_zero_lr_is_identity():
    model = new_model("full", n_max=4, seed=2)
    grads = gradients(model, [_example([0, 1, 2, 3], CLASSICAL)], kappas=(0.5, 0.5))
    same = sgd_step(model, grads, lr=0.0)
    for name in model.weights:
        assert np.array_equal(same.weights[name], model.weights[name])


def test_sgd_rejects_negative_lr():
    model = new_model("simple", n_max=3, seed=0)
    grads = {"last": np.zeros_like(model.weights["last"])}
    with pytest.raises(ValueError):
        sgd_step(model, grads, lr=-0.1)


def test_sgd_leaves_input_model_alone():
    model = new_model("simple", n_max=3, seed=4)
    before = model.weights["last"].copy()
    grads = gradients(model, [_example([0, 2, 1], QUANTUM)], kappas=(0.5, 0.5))
    sgd_step(model, grads, lr=0.5)
    assert np.array_equal(model.weights["last"], before)


def test_sgd_descends_on_a_fixed_batch():
    """A small step against the gradient lowers the batch loss."""
    for variant in ("simple", "full"):
        model = new_model(variant, n_max=4, seed=11)
        batch = [_example([0, 2, 1, 3], QUANTUM), _example([0, 1, 2, 3], CLASSICAL)]
        kappas = (0.5, 0.5)
        before = sum(loss(model, e, kappas) for e in batch) / len(batch)
        stepped = sgd_step(model, gradients(model, batch, kappas=kappas), lr=1e-4)
        after = sum(loss(stepped, e, kappas) for e in batch) / len(batch)
        assert after < before, f"{variant}: loss rose from {before} to {after}"


# ====== prediction ======


def test_predict_tie_goes_classical():
    model = new_model("simple", n_max=3, seed=0)
    zeroed = model.copy()
    zeroed.weights["last"][:] = 0.0
    assert predict(zeroed, line_graph(3, [0, 2, 1])) == CLASSICAL


def test_predict_matches_argmax():
    model = new_model("simple", n_max=4, seed=6)
    for labeling in ([0, 1, 2, 3], [1, 3, 0, 2], [3, 2, 1, 0]):
        g = line_graph(4, labeling)
        x = forward(model, g)
        expect = QUANTUM if x[QUANTUM] > x[CLASSICAL] else CLASSICAL
        assert predict(model, g) == expect


def test_predict_invariant_under_monotone_output_transforms():
    """Scaling all weights by a positive constant (x -> 2x) and shifting
    both bias weights (x -> x + c) leave every prediction unchanged."""
    model = new_model("simple", n_max=4, seed=7)
    graphs = [line_graph(4, lab) for lab in ([0, 1, 2, 3], [0, 2, 1, 3], [2, 0, 3, 1])]
    base = [predict(model, g) for g in graphs]

    scaled = model.copy()
    scaled.weights["last"][:] *= 2.0
    assert [predict(scaled, g) for g in graphs] == base

    shifted = model.copy()
    shifted.weights["last"][0, :] += 3.5  # bias slot feeds both outputs
    assert [predict(shifted, g) for g in graphs] == base


# ====== export and persistence ======


def test_export_has_29_rows_per_class_at_nmax_7():
    model = new_model("simple", n_max=7, seed=0)
    rows = export_last_layer(model)
    per_class = {}
    for row in rows:
        per_class.setdefault(row["class"], []).append(row)
    assert set(per_class) == {"classical", "quantum"}
    assert len(per_class["classical"]) == 29
    assert len(per_class["quantum"]) == 29
    assert len(rows) == 58


def test_export_matches_recorded_initialization():
    """A freshly seeded model exports exactly its initial weights."""
    model = new_model("simple", n_max=3, seed=42)
    twin = new_model("simple", n_max=3, seed=42)
    for row in export_last_layer(model):
        c = {"classical": CLASSICAL, "quantum": QUANTUM}[row["class"]]
        if row["feature"] == "bias":
            slot = 0
        else:
            slot = feature_slot(int(row["vertex"]), int(row["feature"]))
        assert row["weight"] == twin.weights["last"][slot, c]


def test_model_roundtrip(tmp_path):
    for variant in ("simple", "full"):
        model = new_model(variant, n_max=5, seed=13, learning_rate=0.05, hidden_width=8)
        path = tmp_path / f"{variant}.json"
        save_model(model, path)
        back = load_model(path)
        assert back.variant == model.variant
        assert back.n_max == model.n_max
        assert back.learning_rate == model.learning_rate
        assert back.seed == model.seed
        for name in model.weights:
            assert np.array_equal(back.weights[name], model.weights[name]), name


def test_model_file_is_deterministic(tmp_path):
    model = new_model("simple", n_max=4, seed=3)
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    save_model(model, p1)
    save_model(model, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_load_model_rejects_malformed_files(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("not json at all")
    with pytest.raises(ModelFormatError):
        load_model(path)

    path.write_text(json.dumps({"format": "something-else"}))
    with pytest.raises(ModelFormatError):
        load_model(path)

    model = new_model("simple", n_max=3, seed=0)
    good = tmp_path / "good.json"
    save_model(model, good)
    record = json.loads(good.read_text())
    record["weights"]["last"] = [[0.0, 0.0]]  # wrong shape
    bad = tmp_path / "badshape.json"
    bad.write_text(json.dumps(record))
    with pytest.raises(ModelFormatError):
        load_model(bad)


# ====== initialization and training determinism ======


def test_new_model_is_seed_deterministic():
    a = new_model("full", n_max=5, seed=21)
    b = new_model("full", n_max=5, seed=21)
    c = new_model("full", n_max=5, seed=22)
    for name in a.weights:
        assert np.array_equal(a.weights[name], b.weights[name])
    assert any(not np.array_equal(a.weights[n], c.weights[n]) for n in a.weights)


def test_new_model_init_range():
    model = new_model("full", n_max=6, seed=1)
    for w in model.weights.values():
        assert np.all(w >= -0.1) and np.all(w <= 0.1)


def test_training_trajectories_are_bit_identical():
    """Same seed, same data, same every weight after training twice."""
    from qwalk import Schedule, train

    data = build_line_dataset(4)
    runs = []
    for _ in range(2):
        model = new_model("simple", n_max=4, seed=5)
        trained, _ = train(model, data, None, Schedule(epochs=50, seed=5))
        runs.append(trained)
    for name in runs[0].weights:
        assert np.array_equal(runs[0].weights[name], runs[1].weights[name])
