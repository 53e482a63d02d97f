"""Plain-text file formats shared by the generator, tracker and CLI.

All files are UTF-8 with LF line endings and records separated by one
blank line.  Floats are written with %.17g so that read(write(x)) == x
bit-exactly for float64.

Trajectory file: per record a header line ``T=<int>`` followed by T
lines of four floats ``x_min y_min x_max y_max``.

Observation file: per record ``T=<int>``, then for each frame a line
``K=<int>`` followed by K box lines (K may be 0).

Results file: per record ``T=<int>``, ``N=<int>``, then for each source
a line ``track=<n>`` followed by T box lines, then ``eta=<rows>``
followed by that many ``t k n eta`` rows (indices zero-based).
"""

import os
import tempfile

import numpy as np


def _fmt(v):
    return format(float(v), ".17g")


def _box_line(box):
    return " ".join(_fmt(v) for v in box)


def atomic_write_text(path, text):
    """Write text to path via a temp file + rename (atomic on POSIX)."""
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class FormatError(ValueError):
    pass


def _records(text):
    rec = []
    for line in text.split("\n"):
        if line.strip() == "":
            if rec:
                yield rec
                rec = []
        else:
            rec.append(line)
    if rec:
        yield rec


def _parse_box(line, lineno):
    parts = line.split()
    if len(parts) != 4:
        raise FormatError(f"line {lineno}: expected 4 floats, got {len(parts)}")
    try:
        return [float(p) for p in parts]
    except ValueError as e:
        raise FormatError(f"line {lineno}: {e}") from None


def _expect_header(line, key, lineno):
    if not line.startswith(key + "="):
        raise FormatError(f"line {lineno}: expected '{key}=<int>', got {line!r}")
    try:
        return int(line[len(key) + 1 :])
    except ValueError:
        raise FormatError(f"line {lineno}: bad integer in {line!r}") from None


# --- trajectory files -------------------------------------------------------


def format_trajectories(trajs):
    """trajs: iterable of (T, 4) arrays."""
    blocks = []
    for traj in trajs:
        traj = np.asarray(traj)
        lines = [f"T={traj.shape[0]}"]
        lines.extend(_box_line(b) for b in traj)
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n"


def write_trajectories(path, trajs):
    atomic_write_text(path, format_trajectories(trajs))


def parse_trajectories(text):
    trajs = []
    for rec in _records(text):
        t = _expect_header(rec[0], "T", 1)
        if len(rec) != t + 1:
            raise FormatError(f"record declares T={t} but has {len(rec) - 1} box lines")
        trajs.append(np.array([_parse_box(l, i + 2) for i, l in enumerate(rec[1:])]))
    return trajs


def read_trajectories(path):
    with open(path, encoding="utf-8") as f:
        return parse_trajectories(f.read())


# --- observation files ------------------------------------------------------


def format_observations(sequences):
    """sequences: iterable of per-frame lists of (K_t, 4) arrays."""
    blocks = []
    for frames in sequences:
        lines = [f"T={len(frames)}"]
        for boxes in frames:
            boxes = np.asarray(boxes).reshape(-1, 4)
            lines.append(f"K={boxes.shape[0]}")
            lines.extend(_box_line(b) for b in boxes)
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n"


def write_observations(path, sequences):
    atomic_write_text(path, format_observations(sequences))


def parse_observations(text):
    sequences = []
    for rec in _records(text):
        t = _expect_header(rec[0], "T", 1)
        frames = []
        i = 1
        while i < len(rec):
            k = _expect_header(rec[i], "K", i + 1)
            boxes = [_parse_box(rec[i + 1 + j], i + 2 + j) for j in range(k)]
            frames.append(np.array(boxes).reshape(k, 4))
            i += 1 + k
        if len(frames) != t:
            raise FormatError(f"record declares T={t} but has {len(frames)} frames")
        sequences.append(frames)
    return sequences


def read_observations(path):
    with open(path, encoding="utf-8") as f:
        return parse_observations(f.read())


# --- results files ----------------------------------------------------------


def format_results(results):
    """results: iterable of dicts with keys 'm' (T, N, 4) and 'eta'.

    'eta' is a per-frame list of (K_t, N) arrays.
    """
    blocks = []
    for res in results:
        m = np.asarray(res["m"])
        t_len, n_src = m.shape[0], m.shape[1]
        lines = [f"T={t_len}", f"N={n_src}"]
        for n in range(n_src):
            lines.append(f"track={n}")
            lines.extend(_box_line(b) for b in m[:, n])
        eta_rows = []
        for t, eta_t in enumerate(res["eta"]):
            eta_t = np.asarray(eta_t).reshape(-1, n_src)
            for k in range(eta_t.shape[0]):
                for n in range(n_src):
                    eta_rows.append(f"{t} {k} {n} {_fmt(eta_t[k, n])}")
        lines.append(f"eta={len(eta_rows)}")
        lines.extend(eta_rows)
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n"


def write_results(path, results):
    atomic_write_text(path, format_results(results))


def parse_results(text):
    out = []
    for rec in _records(text):
        t_len = _expect_header(rec[0], "T", 1)
        n_src = _expect_header(rec[1], "N", 2)
        i = 2
        m = np.zeros((t_len, n_src, 4))
        for n in range(n_src):
            if rec[i] != f"track={n}":
                raise FormatError(f"expected 'track={n}', got {rec[i]!r}")
            i += 1
            for t in range(t_len):
                m[t, n] = _parse_box(rec[i], i + 1)
                i += 1
        n_rows = _expect_header(rec[i], "eta", i + 1)
        i += 1
        eta_rows = []
        for _ in range(n_rows):
            parts = rec[i].split()
            eta_rows.append((int(parts[0]), int(parts[1]), int(parts[2]), float(parts[3])))
            i += 1
        eta = []
        for t in range(t_len):
            rows_t = [r for r in eta_rows if r[0] == t]
            k_t = max((r[1] for r in rows_t), default=-1) + 1
            eta_t = np.zeros((k_t, n_src))
            for _, k, n, v in rows_t:
                eta_t[k, n] = v
            eta.append(eta_t)
        out.append({"m": m, "eta": eta})
    return out


def read_results(path):
    with open(path, encoding="utf-8") as f:
        return parse_results(f.read())


# --- small tabular side files ----------------------------------------------


def format_diagnostics(diag_rows):
    lines = ["iteration,mean_eta_entropy,mean_V_trace"]
    lines.extend(f"{i},{_fmt(e)},{_fmt(v)}" for i, e, v in diag_rows)
    return "\n".join(lines) + "\n"


def format_history(rows):
    lines = ["epoch,train_elbo,val_elbo"]
    lines.extend(f"{e},{_fmt(tr)},{_fmt(va)}" for e, tr, va in rows)
    return "\n".join(lines) + "\n"


def parse_seqinfo(text):
    """Parse 'name=value' sidecar lines (imWidth, imHeight, frameRate)."""
    info = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith(("[", ";", "#")):
            continue
        if "=" in line:
            key, _, val = line.partition("=")
            info[key.strip()] = val.strip()
    return info
