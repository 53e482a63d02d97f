"""MOTChallenge-format ingest and fixed-cardinality test-sequence construction.

Input CSV lines are ``frame,id,left,top,width,height,conf[,x,y,z]``.
Boxes are converted to the canonical LTRB convention on parse.  Pixel
data can be bridged to the normalized coordinates the pre-trained
models expect by dividing by the image width/height (taken from a
``seqinfo.ini``-style sidecar or given explicitly).
"""

import os
from dataclasses import dataclass

import numpy as np

from . import fileformats
from .metrics import hungarian, iou_matrix


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class DetectionRecord:
    frame: int
    id: int
    left: float
    top: float
    width: float
    height: float
    confidence: float

    def __post_init__(self):
        if self.frame < 1:
            raise DataError(f"frame must be >= 1, got {self.frame}")
        if self.width <= 0 or self.height <= 0:
            raise DataError(f"box size must be positive, got {self.width}x{self.height}")

    @property
    def box(self):
        """Canonical LTRB box."""
        return np.array([self.left, self.top, self.left + self.width, self.top + self.height])


def parse_mot_csv(path):
    records = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) < 7:
                raise DataError(f"{path}: line {lineno}: expected at least 7 fields, got {len(parts)}")
            try:
                rec = DetectionRecord(
                    frame=int(float(parts[0])),
                    id=int(float(parts[1])),
                    left=float(parts[2]),
                    top=float(parts[3]),
                    width=float(parts[4]),
                    height=float(parts[5]),
                    confidence=float(parts[6]),
                )
            except (ValueError, DataError) as e:
                raise DataError(f"{path}: line {lineno}: {e}") from None
            records.append(rec)
    return records


def group_by_frame(records):
    """Dict frame -> list of records, frames as given (1-based)."""
    frames = {}
    for rec in records:
        frames.setdefault(rec.frame, []).append(rec)
    return frames


def match_det_to_gt(dets, gt, iou_threshold=0.5):
    """Label detections with ground-truth identities per frame.

    Per frame, a Hungarian assignment on (1 - IoU) pairs detections and
    ground-truth boxes; pairs below the threshold and unmatched
    detections are discarded.  Returns a list of DetectionRecords with
    ids inherited from the ground truth.
    """
    det_frames = group_by_frame(dets)
    gt_frames = group_by_frame(gt)
    labeled = []
    for frame in sorted(det_frames):
        d_recs = det_frames[frame]
        g_recs = gt_frames.get(frame, [])
        if not g_recs:
            continue
        mat = iou_matrix([r.box for r in d_recs], [r.box for r in g_recs])
        rows, cols = hungarian(-mat)
        for r, c in zip(rows, cols):
            if mat[r, c] >= iou_threshold:
                d = d_recs[r]
                labeled.append(DetectionRecord(d.frame, g_recs[c].id, d.left, d.top,
                                               d.width, d.height, d.confidence))
    return labeled


@dataclass
class Mot3tSequence:
    """One fixed-cardinality test window."""

    observations: list      # per-frame (K_t, 4) arrays (detections, shuffled order)
    truth: np.ndarray       # (T, n_tracks, 4) ground-truth boxes
    track_ids: tuple
    start_frame: int


def build_mot3t(labeled_dets, gt, T, n_tracks, rng):
    """Cut one video into length-T windows with n_tracks full-span tracks.

    A track qualifies for a window when its ground truth covers every
    frame of the window; n_tracks of them are sampled uniformly without
    replacement.  Detection dropouts inside the window are preserved as
    per-frame absences.  Returns (sequences, n_skipped_windows).
    """
    if n_tracks < 1:
        raise DataError("n_tracks must be >= 1")
    gt_frames = group_by_frame(gt)
    det_frames = group_by_frame(labeled_dets)
    if not gt_frames:
        return [], 0
    last = max(gt_frames)
    sequences = []
    skipped = 0
    for start in range(1, last - T + 2, T):
        window = range(start, start + T)
        # identities present in the ground truth of every frame of the window
        common = None
        for frame in window:
            ids = {r.id for r in gt_frames.get(frame, [])}
            common = ids if common is None else common & ids
            if not common:
                break
        if not common or len(common) < n_tracks:
            skipped += 1
            continue
        chosen = tuple(sorted(rng.choice(sorted(common), size=n_tracks, replace=False)))
        truth = np.zeros((T, n_tracks, 4))
        obs = []
        for i, frame in enumerate(window):
            for r in gt_frames[frame]:
                if r.id in chosen:
                    truth[i, chosen.index(r.id)] = r.box
            boxes = [r.box for r in det_frames.get(frame, []) if r.id in chosen]
            if boxes:
                order = rng.permutation(len(boxes))
                obs.append(np.stack([boxes[j] for j in order]))
            else:
                obs.append(np.zeros((0, 4)))
        sequences.append(Mot3tSequence(obs, truth, chosen, start))
    return sequences, skipped


def normalize_boxes(boxes, im_width, im_height):
    """Divide pixel LTRB boxes by the image size (models use unit scale)."""
    if im_width <= 0 or im_height <= 0:
        raise DataError("image dimensions must be positive")
    scale = np.array([im_width, im_height, im_width, im_height], dtype=float)
    return np.asarray(boxes, dtype=float) / scale


def denormalize_boxes(boxes, im_width, im_height):
    scale = np.array([im_width, im_height, im_width, im_height], dtype=float)
    return np.asarray(boxes, dtype=float) * scale


def read_seqinfo(path):
    """Image dimensions from a 'name=value' sidecar file."""
    with open(path, encoding="utf-8") as f:
        info = fileformats.parse_seqinfo(f.read())
    try:
        return int(info["imWidth"]), int(info["imHeight"])
    except (KeyError, ValueError) as e:
        raise DataError(f"{path}: missing or bad imWidth/imHeight: {e}") from None


def find_mot_sequences(root):
    """MOT17-style directories: <root>/<seq>/{det/det.txt, gt/gt.txt, seqinfo.ini}."""
    found = []
    if not os.path.isdir(root):
        return found
    for name in sorted(os.listdir(root)):
        seq_dir = os.path.join(root, name)
        det = os.path.join(seq_dir, "det", "det.txt")
        gt = os.path.join(seq_dir, "gt", "gt.txt")
        if os.path.isfile(det) and os.path.isfile(gt):
            found.append(seq_dir)
    return found
