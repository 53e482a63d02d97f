"""Multi-object tracking metrics (CLEAR + identity scores).

Frame data is exchanged as per-frame lists of ``(identity, box)`` pairs
with boxes in LTRB order.  Matching at each frame keeps the previous
frame's correspondences when still valid and resolves the remainder
with a Hungarian assignment maximizing IoU, subject to a minimum IoU
threshold.  An identity switch is counted when a ground-truth identity
is matched to a different prediction identity than the last one it was
matched with.
"""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment


def iou(a, b):
    """Intersection over union of two LTRB boxes."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    area_a = max(0.0, a[2] - a[0]) * max(0.0, a[3] - a[1])
    area_b = max(0.0, b[2] - b[0]) * max(0.0, b[3] - b[1])
    denom = area_a + area_b - inter
    return inter / denom if denom > 0 else 0.0


def iou_matrix(boxes_a, boxes_b):
    boxes_a = np.asarray(boxes_a, dtype=float).reshape(-1, 4)
    boxes_b = np.asarray(boxes_b, dtype=float).reshape(-1, 4)
    out = np.zeros((boxes_a.shape[0], boxes_b.shape[0]))
    for i, a in enumerate(boxes_a):
        for j, b in enumerate(boxes_b):
            out[i, j] = iou(a, b)
    return out


def hungarian(cost):
    """Minimum-cost assignment; returns (row_indices, col_indices)."""
    cost = np.asarray(cost, dtype=float)
    if cost.size == 0:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    rows, cols = linear_sum_assignment(cost)
    return rows, cols


@dataclass
class MetricsReport:
    num_gt: int
    num_pred: int
    num_matches: int
    fn: int
    fp: int
    ids: int
    mota: float
    motp: float
    idf1: float
    mt: int
    ml: int
    num_identities: int
    fn_rate: float
    fp_rate: float


def _frame_match(gt_pairs, pred_pairs, prev_map, threshold):
    """Match one frame; returns dict gt_id -> (pred_id, iou)."""
    gt_ids = [g for g, _ in gt_pairs]
    pred_ids = [p for p, _ in pred_pairs]
    gt_boxes = {g: b for g, b in gt_pairs}
    pred_boxes = {p: b for p, b in pred_pairs}
    matches = {}
    used_pred = set()
    # keep surviving correspondences from the previous frame
    for g in gt_ids:
        p = prev_map.get(g)
        if p is not None and p in pred_boxes and p not in used_pred:
            val = iou(gt_boxes[g], pred_boxes[p])
            if val >= threshold:
                matches[g] = (p, val)
                used_pred.add(p)
    rem_gt = [g for g in gt_ids if g not in matches]
    rem_pred = [p for p in pred_ids if p not in used_pred]
    if rem_gt and rem_pred:
        mat = iou_matrix([gt_boxes[g] for g in rem_gt], [pred_boxes[p] for p in rem_pred])
        rows, cols = hungarian(-mat)
        for r, c in zip(rows, cols):
            if mat[r, c] >= threshold:
                matches[rem_gt[r]] = (rem_pred[c], mat[r, c])
    return matches


def evaluate(gt_frames, pred_frames, iou_threshold=0.5):
    """CLEAR and identity metrics over one sequence.

    gt_frames, pred_frames: per-frame lists of (identity, box) pairs.
    """
    if len(gt_frames) != len(pred_frames):
        raise ValueError("ground truth and predictions must cover the same frames")
    num_gt = num_pred = num_matches = fn = fp = ids = 0
    iou_sum = 0.0
    last_match = {}
    gt_presence = {}
    gt_coverage = {}
    pair_frames = {}
    pred_presence = {}
    for gt_pairs, pred_pairs in zip(gt_frames, pred_frames):
        num_gt += len(gt_pairs)
        num_pred += len(pred_pairs)
        matches = _frame_match(gt_pairs, pred_pairs, last_match, iou_threshold)
        num_matches += len(matches)
        fn += len(gt_pairs) - len(matches)
        fp += len(pred_pairs) - len(matches)
        for g, (p, val) in matches.items():
            iou_sum += val
            if g in last_match and last_match[g] != p:
                ids += 1
            last_match[g] = p
            gt_coverage[g] = gt_coverage.get(g, 0) + 1
        for g, _ in gt_pairs:
            gt_presence[g] = gt_presence.get(g, 0) + 1
        for p, _ in pred_pairs:
            pred_presence[p] = pred_presence.get(p, 0) + 1
        # identity-level co-occurrence for IDF1 (threshold on per-frame IoU)
        for g, gbox in gt_pairs:
            for p, pbox in pred_pairs:
                if iou(gbox, pbox) >= iou_threshold:
                    pair_frames[(g, p)] = pair_frames.get((g, p), 0) + 1

    # IDF1: one global assignment of gt identities to prediction identities
    gt_id_list = sorted(gt_presence)
    pred_id_list = sorted(pred_presence)
    idtp = 0
    if gt_id_list and pred_id_list:
        mat = np.zeros((len(gt_id_list), len(pred_id_list)))
        for (g, p), c in pair_frames.items():
            mat[gt_id_list.index(g), pred_id_list.index(p)] = c
        rows, cols = hungarian(-mat)
        idtp = int(mat[rows, cols].sum())
    idf1 = 2.0 * idtp / (num_gt + num_pred) if num_gt + num_pred else 0.0

    mt = ml = 0
    for g, present in gt_presence.items():
        cov = gt_coverage.get(g, 0) / present
        if cov >= 0.8:
            mt += 1
        elif cov <= 0.2:
            ml += 1

    mota = 1.0 - (fn + fp + ids) / num_gt if num_gt else 0.0
    motp = iou_sum / num_matches if num_matches else 0.0
    return MetricsReport(
        num_gt=num_gt,
        num_pred=num_pred,
        num_matches=num_matches,
        fn=fn,
        fp=fp,
        ids=ids,
        mota=mota,
        motp=motp,
        idf1=idf1,
        mt=mt,
        ml=ml,
        num_identities=len(gt_presence),
        fn_rate=fn / num_gt if num_gt else 0.0,
        fp_rate=fp / num_gt if num_gt else 0.0,
    )


def frames_from_tracks(tracks, presence=None):
    """Convert a (T, N, 4) track array to per-frame (identity, box) pairs.

    presence: optional (T, N) boolean mask of which tracks exist per frame.
    """
    tracks = np.asarray(tracks, dtype=float)
    t_len, n_src = tracks.shape[0], tracks.shape[1]
    frames = []
    for t in range(t_len):
        pairs = []
        for n in range(n_src):
            if presence is None or presence[t, n]:
                pairs.append((n, tracks[t, n]))
        frames.append(pairs)
    return frames


def format_report(report):
    """Plain table plus machine-readable key=value lines."""
    rows = [
        ("MOTA", f"{report.mota:.4f}"),
        ("MOTP", f"{report.motp:.4f}"),
        ("IDF1", f"{report.idf1:.4f}"),
        ("IDS", str(report.ids)),
        ("FN", str(report.fn)),
        ("FP", str(report.fp)),
        ("MT", str(report.mt)),
        ("ML", str(report.ml)),
        ("GT", str(report.num_gt)),
    ]
    width = max(len(k) for k, _ in rows)
    lines = [f"{k.ljust(width)}  {v}" for k, v in rows]
    lines.append("")
    for key in ("mota", "motp", "idf1", "ids", "fn", "fp", "mt", "ml",
                "num_gt", "num_pred", "fn_rate", "fp_rate"):
        val = getattr(report, key)
        lines.append(f"{key}={val:.6f}" if isinstance(val, float) else f"{key}={val}")
    return "\n".join(lines) + "\n"
