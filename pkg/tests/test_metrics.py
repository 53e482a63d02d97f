import itertools

import numpy as np
import pytest

from mixtrack import metrics
from mixtrack.metrics import evaluate, format_report, frames_from_tracks, hungarian, iou


def brute_force_assignment(cost):
    """Minimum-cost assignment by permutation enumeration (square or not)."""
    cost = np.asarray(cost)
    n_rows, n_cols = cost.shape
    k = min(n_rows, n_cols)
    best = None
    best_val = np.inf
    rows = range(n_rows)
    for row_subset in itertools.permutations(rows, k):
        for col_subset in itertools.permutations(range(n_cols), k):
            val = sum(cost[r, c] for r, c in zip(row_subset, col_subset))
            if val < best_val:
                best_val = val
                best = (row_subset, col_subset)
    return best_val, best


def test_iou_identity_and_symmetry():
    rng = np.random.default_rng(0)
    for _ in range(200):
        a = np.sort(rng.uniform(0, 1, 4))[[0, 1, 2, 3]]
        a = np.array([a[0], a[1], a[2], a[3]])
        b = rng.uniform(0, 1, 4)
        b = np.array([min(b[0], b[2]), min(b[1], b[3]), max(b[0], b[2]), max(b[1], b[3])])
        assert iou(a, a) == pytest.approx(1.0)
        assert iou(a, b) == pytest.approx(iou(b, a))
        assert 0.0 <= iou(a, b) <= 1.0


def test_iou_hand_values():
    a = [0, 0, 2, 2]
    assert iou(a, [1, 0, 3, 2]) == pytest.approx(2.0 / 6.0)
    assert iou(a, [2, 2, 4, 4]) == 0.0
    assert iou(a, [0, 0, 1, 1]) == pytest.approx(0.25)


def test_hungarian_matches_brute_force():
    rng = np.random.default_rng(1)
    for trial in range(200):
        n = int(rng.integers(1, 6))
        m = int(rng.integers(1, 6))
        cost = rng.normal(size=(n, m))
        rows, cols = hungarian(cost)
        val = cost[rows, cols].sum()
        ref, _ = brute_force_assignment(cost)
        assert val == pytest.approx(ref, abs=1e-12), f"trial {trial}"


def test_hungarian_empty():
    rows, cols = hungarian(np.zeros((0, 3)))
    assert len(rows) == 0 and len(cols) == 0


def _perfect_scene(t_len=10, n=3, seed=2):
    rng = np.random.default_rng(seed)
    tracks = np.zeros((t_len, n, 4))
    for i in range(n):
        x = i * 1.0 + rng.uniform(0, 0.1)
        for t in range(t_len):
            tracks[t, i] = [x + 0.01 * t, 0.0, x + 0.01 * t + 0.5, 0.5]
    return tracks


def test_perfect_prediction_all_ones():
    tracks = _perfect_scene()
    rep = evaluate(frames_from_tracks(tracks), frames_from_tracks(tracks))
    assert rep.mota == 1.0
    assert rep.motp == pytest.approx(1.0)
    assert rep.idf1 == pytest.approx(1.0)
    assert rep.ids == rep.fp == rep.fn == 0
    assert rep.mt == 3 and rep.ml == 0


def test_mota_fixture_084():
    # 2 gt tracks x 50 frames = 100 gt boxes; 10 FN, 5 FP, 1 IDS
    box_a = [0.0, 0.0, 1.0, 1.0]
    box_b = [5.0, 0.0, 6.0, 1.0]
    far = [50.0, 50.0, 51.0, 51.0]
    gt, pred = [], []
    for t in range(50):
        gt.append([(0, box_a), (1, box_b)])
        frame = []
        # gt 0 predicted as id 0 until frame 29, then as id 2 (one switch)
        frame.append((0 if t < 30 else 2, box_a))
        # gt 1 missing for the first 10 frames (10 FN)
        if t >= 10:
            frame.append((1, box_b))
        # 5 spurious detections (5 FP)
        if 20 <= t < 25:
            frame.append((9, far))
        pred.append(frame)
    rep = evaluate(gt, pred)
    assert rep.num_gt == 100
    assert rep.fn == 10
    assert rep.fp == 5
    assert rep.ids == 1
    assert rep.mota == pytest.approx(0.84, abs=1e-15)


def test_mota_decreases_with_injected_errors():
    tracks = _perfect_scene()
    gt = frames_from_tracks(tracks)
    base = evaluate(gt, frames_from_tracks(tracks)).mota
    # inject a FN
    pred_fn = frames_from_tracks(tracks)
    pred_fn[4] = pred_fn[4][:-1]
    assert evaluate(gt, pred_fn).mota < base
    # inject a FP
    pred_fp = frames_from_tracks(tracks)
    pred_fp[4] = pred_fp[4] + [(99, [40.0, 40.0, 41.0, 41.0])]
    assert evaluate(gt, pred_fp).mota < base
    # inject an IDS
    pred_ids = frames_from_tracks(tracks)
    pred_ids[5] = [(n + 100, b) for n, b in pred_ids[5]]
    assert evaluate(gt, pred_ids).mota < base


def test_identity_relabeling_invariance():
    tracks = _perfect_scene()
    gt = frames_from_tracks(tracks)
    pred = frames_from_tracks(tracks)
    relabeled = [[(n + 7, b) for n, b in frame] for frame in pred]
    a = evaluate(gt, pred)
    b = evaluate(gt, relabeled)
    assert a.mota == b.mota
    assert a.motp == pytest.approx(b.motp)
    assert a.fp == b.fp and a.fn == b.fn
    assert a.idf1 == pytest.approx(b.idf1)


def test_percentages_consistent_with_counts():
    rng = np.random.default_rng(3)
    tracks = _perfect_scene(t_len=20)
    gt = frames_from_tracks(tracks)
    pred = frames_from_tracks(tracks + rng.normal(0, 0.02, tracks.shape))
    pred[3] = pred[3][:-1]
    rep = evaluate(gt, pred)
    assert rep.fn_rate == pytest.approx(rep.fn / rep.num_gt, abs=1e-12)
    assert rep.fp_rate == pytest.approx(rep.fp / rep.num_gt, abs=1e-12)


def test_mt_ml_coverage():
    tracks = _perfect_scene(t_len=10)
    gt = frames_from_tracks(tracks)
    pred = frames_from_tracks(tracks)
    # drop source 2 from all but one frame -> coverage 0.1 -> mostly lost
    pred = [[(n, b) for n, b in frame if n != 2] for frame in pred[:9]] + [pred[9]]
    rep = evaluate(gt, pred)
    assert rep.mt == 2
    assert rep.ml == 1


def test_matching_respects_threshold():
    gt = [[(0, [0.0, 0.0, 1.0, 1.0])]]
    pred = [[(0, [0.8, 0.0, 1.8, 1.0])]]  # IoU = 0.25/1.75 < 0.5
    rep = evaluate(gt, pred)
    assert rep.fn == 1 and rep.fp == 1 and rep.num_matches == 0
    rep2 = evaluate(gt, pred, iou_threshold=0.1)
    assert rep2.num_matches == 1


def test_frame_count_mismatch_rejected():
    with pytest.raises(ValueError):
        evaluate([[]], [[], []])


def test_format_report_machine_readable():
    tracks = _perfect_scene()
    rep = evaluate(frames_from_tracks(tracks), frames_from_tracks(tracks))
    text = format_report(rep)
    assert "mota=1.000000" in text
    assert "idf1=1.000000" in text
    assert "fn=0" in text
    assert text.splitlines()[0].startswith("MOTA")
