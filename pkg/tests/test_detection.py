import itertools
import math

import numpy as np
import pytest
import torch

from bevfuse.detection import (ATTRIBUTES, CLASSES, Annotation, Box3D, ContextHeads,
                               Detection, DetectionHead, LossBreakdown, binary_ce,
                               box_params_from_raw, detection_loss,
                               detections_from_params, hungarian_match, joint_loss,
                               wrap_angle)
from bevfuse.geometry import BevGridSpec
from gradcheck import check_parameter_grads, probe_weights


# ---------------------------------------------------------------------------
# box / types


def test_box_params_layout_and_yaw_wrap():
    box = Box3D(center=[1, 2, 0.5], size=[4, 2, 1.5], yaw=3 * np.pi, velocity=[1, -1])
    assert box.yaw == pytest.approx(np.pi)
    p = box.params()
    np.testing.assert_allclose(p[:3], [1, 2, 0.5])
    np.testing.assert_allclose(p[3:6], [4, 2, 1.5])
    np.testing.assert_allclose(p[6:8], [np.sin(box.yaw), np.cos(box.yaw)], atol=1e-12)
    np.testing.assert_allclose(p[8:], [1, -1])
    with pytest.raises(ValueError):
        Box3D(center=[0, 0, 0], size=[0, 1, 1], yaw=0, velocity=[0, 0])


def test_wrap_angle_range():
    for a in np.linspace(-10, 10, 101):
        w = wrap_angle(a)
        assert -np.pi < w <= np.pi
        assert abs(math.remainder(a - w, 2 * np.pi)) < 1e-9


def test_detection_scores_must_normalize():
    box = Box3D(center=[0, 0, 0], size=[1, 1, 1], yaw=0, velocity=[0, 0])
    Detection(box=box, class_id=0, confidence=0.5, scores=np.array([0.2, 0.2, 0.2, 0.2, 0.2]))
    with pytest.raises(ValueError):
        Detection(box=box, class_id=0, confidence=0.5, scores=np.array([0.5, 0.2, 0.2, 0.2, 0.2]))


# ---------------------------------------------------------------------------
# detection head


def test_head_output_shapes(grid):
    torch.manual_seed(0)
    head = DetectionHead(channels=32, num_queries=20)
    logits, boxes = head(torch.randn(8, 8, 32))
    assert logits.shape == (20, len(CLASSES) + 1)
    assert boxes.shape == (20, 10)


def test_head_zeroed_weights_give_identical_outputs():
    torch.manual_seed(1)
    head = DetectionHead(channels=16, num_queries=6)
    with torch.no_grad():
        for p in head.parameters():
            p.zero_()
        head.object_queries.copy_(torch.randn(6, 16))  # queries differ, outputs must not
    logits, boxes = head(torch.randn(4, 4, 16))
    assert torch.equal(logits, torch.zeros_like(logits))
    assert torch.equal(boxes, torch.zeros_like(boxes))


def test_head_gradients_flow_to_bev_and_match_fd():
    torch.manual_seed(2)
    head = DetectionHead(channels=8, num_queries=4, n_heads=2).double()
    bev = torch.randn(4, 4, 8, dtype=torch.float64, requires_grad=True)
    w_cls = probe_weights((4, len(CLASSES) + 1), seed=1)
    w_box = probe_weights((4, 10), seed=2)

    def loss():
        logits, boxes = head(bev)
        return (logits * w_cls).sum() + (boxes * w_box).sum()

    grad_bev = torch.autograd.grad(loss(), bev, retain_graph=False)[0]
    assert grad_bev.abs().sum() > 0
    params = [head.object_queries, head.q_proj.weight, head.k_proj.weight,
              head.v_proj.weight, head.out_proj.weight, head.class_branch.weight,
              head.box_branch[0].weight, head.box_branch[2].weight]
    check_parameter_grads(params, loss, entries_per_tensor=3)
    check_parameter_grads([bev], loss, entries_per_tensor=4)


def test_box_decoding_ranges(grid):
    from bevfuse.detection import ANGLE_GAIN, VELOCITY_GAIN
    raw = torch.randn(50, 10) * 3
    params = box_params_from_raw(raw, grid)
    # closed bounds: float32 sigmoid saturates to exactly 0/1 for large logits
    assert (params[:, 0].abs() <= grid.x_extent).all()
    assert (params[:, 1].abs() <= grid.y_extent).all()
    assert (params[:, 2].abs() <= 2.0).all()
    assert (params[:, 3:6] > 0).all()
    # sin/cos and velocity channels are plain linear outputs (fixed gains)
    torch.testing.assert_close(params[:, 6:8], ANGLE_GAIN * raw[:, 6:8], rtol=0, atol=0)
    torch.testing.assert_close(params[:, 8:], VELOCITY_GAIN * raw[:, 8:], rtol=0, atol=0)


def test_detections_from_params_decode():
    params = np.array([[1.0, 2.0, 0.5, 4.0, 2.0, 1.5, np.sin(0.7), np.cos(0.7), 3.0, 0.0],
                       [0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 0.1, 0.0]])
    probs = np.array([[0.6, 0.1, 0.1, 0.1, 0.1],
                      [0.1, 0.2, 0.5, 0.1, 0.1]])
    dets = detections_from_params(params, probs)
    assert dets[0].class_id == 0 and dets[0].confidence == pytest.approx(0.6)
    assert dets[0].box.yaw == pytest.approx(0.7)
    assert dets[0].attribute_id == 1  # speed 3 -> moving
    assert dets[1].class_id == 2 and dets[1].attribute_id == 0


# ---------------------------------------------------------------------------
# context heads


def test_context_zero_bev_zero_bias_gives_half_probability():
    torch.manual_seed(3)
    heads = ContextHeads(16)
    with torch.no_grad():
        heads.rain.bias.zero_()
        heads.tod.bias.zero_()
    with torch.no_grad():
        rain, tod = heads(torch.zeros(4, 4, 16))
    assert float(rain) == 0.0 and float(tod) == 0.0
    assert float(torch.sigmoid(rain)) == pytest.approx(0.5)


def test_context_constant_bev_equals_linear_of_constant():
    torch.manual_seed(4)
    heads = ContextHeads(8)
    v = torch.randn(8)
    bev = v.expand(6, 6, 8).contiguous()
    rain, tod = heads(bev)
    expected_rain = heads.rain(v).squeeze()
    expected_tod = heads.tod(v).squeeze()
    torch.testing.assert_close(rain, expected_rain, rtol=0, atol=1e-6)
    torch.testing.assert_close(tod, expected_tod, rtol=0, atol=1e-6)


def test_context_matches_mean_then_linear_oracle():
    torch.manual_seed(5)
    heads = ContextHeads(8)
    bev = torch.randn(5, 7, 8)
    rain, _ = heads(bev)
    pooled = bev.numpy().mean(axis=(0, 1))
    expected = pooled @ heads.rain.weight.detach().numpy().T + heads.rain.bias.detach().numpy()
    assert float(rain) == pytest.approx(float(expected), abs=1e-6)


def test_context_heads_gradcheck():
    torch.manual_seed(6)
    heads = ContextHeads(8).double()
    bev = torch.randn(4, 4, 8, dtype=torch.float64)

    def loss():
        rain, tod = heads(bev)
        return rain * 1.3 + tod * (-0.7)

    check_parameter_grads(list(heads.parameters()), loss)


# ---------------------------------------------------------------------------
# hungarian matching


def _enumerate_best(cost: np.ndarray):
    """Exhaustive minimum-cost assignment with lexicographic tie-break."""
    n_rows, n_cols = cost.shape
    size = min(n_rows, n_cols)
    best = None
    best_total = np.inf
    for rows in itertools.combinations(range(n_rows), size):
        for cols in itertools.permutations(range(n_cols), size):
            pairs = sorted(zip(rows, cols))
            total = sum(cost[r, c] for r, c in pairs)
            if total < best_total - 1e-12 or \
                    (abs(total - best_total) <= 1e-12 and pairs < best):
                best, best_total = pairs, total
    return best, best_total


def test_hungarian_single_pair():
    assert hungarian_match(np.array([[3.5]])) == [(0, 0)]


def test_hungarian_dominant_diagonal():
    cost = np.full((3, 3), 10.0)
    np.fill_diagonal(cost, 0.1)
    assert hungarian_match(cost) == [(0, 0), (1, 1), (2, 2)]


def test_hungarian_all_zero_tie_breaks_lexicographically():
    assert hungarian_match(np.zeros((3, 3))) == [(0, 0), (1, 1), (2, 2)]
    assert hungarian_match(np.zeros((2, 4))) == [(0, 0), (1, 1)]
    assert hungarian_match(np.zeros((4, 2))) == [(0, 0), (1, 1)]


def test_hungarian_matches_enumeration_5x3():
    rng = np.random.default_rng(21)
    for _ in range(25):
        cost = rng.uniform(0, 10, size=(5, 3))
        got = hungarian_match(cost)
        expected, expected_total = _enumerate_best(cost)
        assert got == expected
        assert sum(cost[r, c] for r, c in got) == pytest.approx(expected_total)


def test_hungarian_matches_enumeration_rectangular_tall_and_ties():
    rng = np.random.default_rng(22)
    for _ in range(10):
        cost = rng.integers(0, 4, size=(3, 5)).astype(float)  # many exact ties
        got = hungarian_match(cost)
        expected, _ = _enumerate_best(cost)
        assert got == expected


def test_hungarian_beats_random_permutations():
    rng = np.random.default_rng(23)
    cost = rng.uniform(0, 5, size=(12, 7))
    got = hungarian_match(cost)
    total = sum(cost[r, c] for r, c in got)
    for _ in range(100):
        rows = rng.choice(12, size=7, replace=False)
        cols = rng.permutation(7)
        assert total <= sum(cost[r, c] for r, c in zip(rows, cols)) + 1e-9


def test_hungarian_rejects_bad_input():
    with pytest.raises(ValueError):
        hungarian_match(np.array([[np.inf, 1.0]]))
    with pytest.raises(ValueError):
        hungarian_match(np.zeros(3))
    assert hungarian_match(np.zeros((0, 3))) == []


# ---------------------------------------------------------------------------
# losses


def test_detection_loss_empty_targets_is_mean_noobj_ce():
    torch.manual_seed(7)
    logits = torch.randn(6, 5)
    boxes = torch.randn(6, 10)
    loss, pairs = detection_loss(logits, boxes, np.array([], dtype=np.int64),
                                 np.zeros((0, 10)))
    assert pairs == []
    expected = -torch.log_softmax(logits, dim=1)[:, -1].mean()
    torch.testing.assert_close(loss, expected, rtol=0, atol=1e-7)


def test_detection_loss_perfect_single_prediction():
    target_box = np.array([1.0, 2.0, 0.5, 4.0, 2.0, 1.5, 0.0, 1.0, 0.0, 0.0])
    logits = torch.tensor([[1000.0, 0.0, 0.0, 0.0, 0.0]])
    boxes = torch.tensor([target_box], dtype=torch.float32)
    loss, pairs = detection_loss(logits, boxes, np.array([0]), target_box[None, :])
    assert pairs == [(0, 0)]
    assert float(loss) == 0.0  # class log-prob exactly 0, box L1 exactly 0


def test_detection_loss_matches_hand_rolled_oracle():
    rng = np.random.default_rng(24)
    torch.manual_seed(8)
    lambda_cls, lambda_box = 1.0, 5.0
    for _ in range(10):
        logits = torch.randn(4, 5, dtype=torch.float64)
        boxes = torch.randn(4, 10, dtype=torch.float64)
        tcls = rng.integers(0, 4, size=2)
        tbox = rng.normal(size=(2, 10))
        loss, pairs = detection_loss(logits, boxes, tcls, tbox,
                                     lambda_cls=lambda_cls, lambda_box=lambda_box)

        logp = torch.log_softmax(logits, dim=1).numpy()
        cost = np.zeros((4, 2))
        for q in range(4):
            for t in range(2):
                cost[q, t] = lambda_cls * -logp[q, tcls[t]] \
                    + lambda_box * np.abs(boxes[q].numpy() - tbox[t]).sum()
        expected_pairs, _ = _enumerate_best(cost)
        assert pairs == expected_pairs

        cls_terms = []
        box_sum = 0.0
        matched = dict(expected_pairs)
        for q in range(4):
            if q in matched:
                cls_terms.append(-logp[q, tcls[matched[q]]])
                box_sum += np.abs(boxes[q].numpy() - tbox[matched[q]]).sum()
            else:
                cls_terms.append(-logp[q, 4])
        expected = lambda_cls * np.mean(cls_terms) + lambda_box * box_sum / 2
        assert float(loss) == pytest.approx(expected, abs=1e-6)


def test_detection_loss_permutation_invariant():
    rng = np.random.default_rng(25)
    torch.manual_seed(9)
    logits = torch.randn(5, 5, dtype=torch.float64)
    boxes = torch.randn(5, 10, dtype=torch.float64)
    tcls = rng.integers(0, 4, size=3)
    tbox = rng.normal(size=(3, 10))
    base, _ = detection_loss(logits, boxes, tcls, tbox)

    t_perm = rng.permutation(3)
    ann_perm, _ = detection_loss(logits, boxes, tcls[t_perm], tbox[t_perm])
    assert float(ann_perm) == pytest.approx(float(base), abs=1e-9)

    q_perm = torch.from_numpy(rng.permutation(5))
    query_perm, _ = detection_loss(logits[q_perm], boxes[q_perm], tcls, tbox)
    assert float(query_perm) == pytest.approx(float(base), abs=1e-9)


def test_binary_ce_reference_values():
    assert float(binary_ce(0.0, 1)) == pytest.approx(np.log(2.0), abs=1e-9)
    assert float(binary_ce(0.0, 0)) == pytest.approx(np.log(2.0), abs=1e-9)
    assert float(binary_ce(30.0, 1)) < 1e-9
    assert float(binary_ce(-30.0, 0)) < 1e-9
    assert float(binary_ce(1.0, 1)) == pytest.approx(np.log1p(np.exp(-1.0)), abs=1e-9)
    assert np.isfinite(float(binary_ce(1000.0, 0)))  # stable under saturation


def test_binary_ce_convexity_at_symmetric_point():
    for logit in np.linspace(-5, 5, 41):
        s = float(binary_ce(logit, 1)) + float(binary_ce(-logit, 1))
        assert s >= 2 * np.log(2.0) - 1e-12
        if abs(logit) > 1e-6:
            assert s > 2 * np.log(2.0)
    assert float(binary_ce(0.0, 1)) + float(binary_ce(0.0, 1)) == \
        pytest.approx(2 * np.log(2.0), abs=1e-12)


def test_joint_loss_values_and_exact_additivity():
    assert joint_loss(1.0, 2.0, 3.0) == LossBreakdown(1.0, 2.0, 3.0, 6.0)
    assert joint_loss(0.0, 0.0, 0.0).l_joint == 0.0
    assert joint_loss(0.4, 0.0, 0.7).l_joint == 0.4 + 0.0 + 0.7
    rng = np.random.default_rng(26)
    for _ in range(200):
        d, r, t = rng.uniform(0, 100, 3)
        b = joint_loss(d, r, t)
        assert b.l_joint == b.l_det + b.l_rain + b.l_tod  # bit-exact

    tensors = joint_loss(torch.tensor(0.5), torch.tensor(1.5), torch.tensor(2.0))
    assert tensors.l_joint == tensors.l_det + tensors.l_rain + tensors.l_tod
