"""Command-line pipeline: data generation, pre-training, tracking,
evaluation, dataset construction and figure emission.

Every numeric option has a built-in default; a JSON file given with
``--config`` overrides the defaults, and explicit command-line flags
override the file.  Unknown keys in the config file are rejected.  All
randomness derives from the single ``--seed`` value, and all output
files are written atomically.
"""

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import baselines, dataio, fileformats, metrics, plotting, srnn, trajgen, vem


class CliError(Exception):
    pass


# --- option plumbing --------------------------------------------------------


def _add_options(parser, options):
    for name, spec in options.items():
        flag = "--" + name.replace("_", "-")
        if spec["type"] is bool:
            parser.add_argument(flag, action=argparse.BooleanOptionalAction,
                                default=None, help=f"{spec['help']} (default: {spec['default']})")
        else:
            parser.add_argument(flag, type=spec["type"], default=None,
                                help=f"{spec['help']} (default: {spec['default']})")


def _resolve(args, options):
    """CLI flags > config file > defaults; unknown config keys rejected."""
    config = {}
    if args.config:
        with open(args.config, encoding="utf-8") as f:
            config = json.load(f)
        unknown = set(config) - set(options)
        if unknown:
            raise CliError(f"unknown config keys: {sorted(unknown)}")
    out = {}
    for name, spec in options.items():
        cli_val = getattr(args, name)
        if cli_val is not None:
            out[name] = cli_val
        elif name in config:
            val = config[name]
            if spec["type"] is not bool and val is not None:
                val = spec["type"](val)
            out[name] = val
        else:
            out[name] = spec["default"]
    missing = [k for k, s in options.items() if s.get("required") and out[k] is None]
    if missing:
        raise CliError(f"missing required options: {sorted(missing)}")
    return argparse.Namespace(**out)


def _opt(type_, default, help_, required=False):
    return {"type": type_, "default": default, "help": help_, "required": required}


# --- gen-data ---------------------------------------------------------------

GEN_DATA_OPTIONS = {
    "mode": _opt(str, "trajectories", "'trajectories' or 'scenes'"),
    "count": _opt(int, 100, "number of trajectories or scenes"),
    "frames": _opt(int, 60, "frames per sequence (T)"),
    "s_max": _opt(int, 3, "max motion segments per coordinate"),
    "n_sources": _opt(int, 3, "sources per scene (scenes mode)"),
    "occlusion_rate": _opt(float, 0.15, "per-frame detection dropout probability"),
    "noise_scale": _opt(float, 0.04, "detection noise relative to box size"),
    "seed": _opt(int, 0, "root random seed"),
    "out": _opt(str, None, "output file (trajectories / observations)", required=True),
    "out_truth": _opt(str, None, "ground-truth output file (scenes mode)"),
}


def cmd_gen_data(args):
    cfg = trajgen.TrajGenConfig(T=args.frames, s_max=args.s_max).validate()
    rng = np.random.default_rng(args.seed)
    if args.mode == "trajectories":
        trajgen.gen_dataset(rng, cfg, args.count, args.out)
        print(f"wrote {args.count} trajectories of T={args.frames} to {args.out}")
    elif args.mode == "scenes":
        if not args.out_truth:
            raise CliError("scenes mode requires --out-truth")
        all_obs, all_truth = [], []
        for _ in range(args.count):
            truth, obs, _labels = trajgen.gen_multisource_scene(
                rng, cfg, args.n_sources, args.frames, args.occlusion_rate, args.noise_scale
            )
            all_obs.append(obs)
            all_truth.append(truth)
        fileformats.write_observations(args.out, all_obs)
        fileformats.write_trajectories(
            args.out_truth,
            [t.reshape(args.frames * args.n_sources, 4) for t in all_truth],
        )
        print(f"wrote {args.count} scenes ({args.n_sources} sources, T={args.frames}) "
              f"to {args.out} / {args.out_truth}")
    else:
        raise CliError(f"unknown mode {args.mode!r}")
    return 0


# --- pretrain ---------------------------------------------------------------

PRETRAIN_OPTIONS = {
    "model": _opt(str, "srnn", "'srnn' or 'deepar'"),
    "data": _opt(str, None, "trajectory file with training sequences", required=True),
    "val_fraction": _opt(float, 0.1, "fraction of sequences held out for validation"),
    "learning_rate": _opt(float, 1e-3, "Adam learning rate"),
    "batch_size": _opt(int, 128, "minibatch size"),
    "max_epochs": _opt(int, 1000, "maximum training epochs"),
    "patience": _opt(int, 150, "early-stopping patience (epochs)"),
    "seed": _opt(int, 0, "root random seed"),
    "out": _opt(str, None, "checkpoint output file", required=True),
    "history": _opt(str, None, "training-history CSV output file"),
}


def cmd_pretrain(args):
    trajs = fileformats.read_trajectories(args.data)
    lens = {t.shape[0] for t in trajs}
    if len(lens) != 1:
        raise CliError(f"training sequences must share one length, got {sorted(lens)}")
    data = np.stack(trajs)
    n_val = max(1, int(round(len(data) * args.val_fraction)))
    if n_val >= len(data):
        raise CliError("validation split leaves no training data")
    rng = np.random.default_rng(args.seed)
    order = rng.permutation(len(data))
    val, train = data[order[:n_val]], data[order[n_val:]]
    cfg = srnn.TrainConfig(
        learning_rate=args.learning_rate, batch_size=args.batch_size,
        patience=args.patience, max_epochs=args.max_epochs, seed=args.seed,
    )
    if args.model == "srnn":
        params = srnn.init_params(rng)
        trainer = srnn.train
    elif args.model == "deepar":
        params = baselines.init_deep_ar_params(rng)
        trainer = baselines.train_deep_ar
    else:
        raise CliError(f"unknown model {args.model!r}")
    try:
        params, info = trainer(params, train, val, cfg)
    except srnn.TrainingError as e:
        print(f"training diverged: {e}", file=sys.stderr)
        return 1
    srnn.save_params(params, args.out)
    if args.history:
        fileformats.atomic_write_text(args.history, fileformats.format_history(info["history"]))
    print(f"trained {args.model} for {len(info['history'])} epochs; "
          f"best validation ELBO {info['best_val_elbo']:.4f}; checkpoint {args.out}")
    return 0


# --- track ------------------------------------------------------------------

TRACK_OPTIONS = {
    "model": _opt(str, "mixdvae", "'mixdvae', 'vkf' or 'deepar'"),
    "checkpoint": _opt(str, None, "pre-trained parameter file (mixdvae/deepar)"),
    "obs": _opt(str, None, "observation file (one record per sequence)", required=True),
    "out": _opt(str, None, "results output file", required=True),
    "n_sources": _opt(int, 3, "number of tracked sources N"),
    "r_phi": _opt(float, 0.04, "observation noise scale r_phi"),
    "iters": _opt(int, 70, "VEM iterations I"),
    "subseq_len": _opt(int, 30, "cascade initialization subsequence length J"),
    "init_iters": _opt(int, 20, "VEM iterations per initialization subsequence I0"),
    "fine_tune": _opt(bool, False, "fine-tune the latent encoder during tracking"),
    "m_step": _opt(bool, False, "update observation covariances with an M-step"),
    "seed": _opt(int, 0, "root random seed"),
    "jobs": _opt(int, 1, "sequences processed concurrently"),
    "diagnostics": _opt(str, None, "per-iteration diagnostics CSV (first sequence)"),
}


def _track_one(model, params, obs, cfg):
    if model == "mixdvae":
        return vem.run(params, obs, cfg)
    if model == "vkf":
        return baselines.vkf_run(obs, cfg)
    if model == "deepar":
        return baselines.deep_ar_run(params, obs, cfg)
    raise CliError(f"unknown model {model!r}")


def cmd_track(args):
    params = None
    if args.model in ("mixdvae", "deepar"):
        if not args.checkpoint:
            raise CliError(f"model {args.model!r} requires --checkpoint")
        if not os.path.isfile(args.checkpoint):
            raise CliError(f"checkpoint not found: {args.checkpoint}")
        params = srnn.load_params(args.checkpoint)
    sequences = fileformats.read_observations(args.obs)
    if not sequences:
        raise CliError(f"no observation sequences in {args.obs}")
    # one sub-seed per sequence so concurrency cannot change results
    children = np.random.SeedSequence(args.seed).spawn(len(sequences))

    def work(i):
        cfg = vem.VemConfig(
            n_sources=args.n_sources, r_phi=args.r_phi, n_iters=args.iters,
            subseq_len=args.subseq_len, init_iters=args.init_iters,
            fine_tune=args.fine_tune, m_step=args.m_step,
            seed=int(children[i].generate_state(1)[0]),
        )
        return _track_one(args.model, params, sequences[i], cfg)

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            states = list(pool.map(work, range(len(sequences))))
    else:
        states = [work(i) for i in range(len(sequences))]
    fileformats.write_results(args.out, [{"m": st.m, "eta": st.eta} for st in states])
    if args.diagnostics:
        fileformats.atomic_write_text(
            args.diagnostics, fileformats.format_diagnostics(states[0].diagnostics)
        )
    print(f"tracked {len(states)} sequences with {args.model}; results in {args.out}")
    return 0


# --- evaluate ---------------------------------------------------------------

EVALUATE_OPTIONS = {
    "results": _opt(str, None, "results file from `track`", required=True),
    "truth": _opt(str, None, "ground-truth trajectory file", required=True),
    "n_sources": _opt(int, 3, "sources per sequence in the truth file"),
    "iou_threshold": _opt(float, 0.5, "IoU threshold for a valid match"),
    "out": _opt(str, None, "optional report output file"),
}


def cmd_evaluate(args):
    results = fileformats.read_results(args.results)
    truth_flat = fileformats.read_trajectories(args.truth)
    if len(results) != len(truth_flat):
        raise CliError(
            f"{len(results)} result records vs {len(truth_flat)} truth records"
        )
    gt_frames, pred_frames = [], []
    for res, flat in zip(results, truth_flat):
        t_len, n_src = res["m"].shape[0], res["m"].shape[1]
        if flat.shape[0] != t_len * args.n_sources:
            raise CliError(
                f"truth record has {flat.shape[0]} boxes, expected "
                f"{t_len} frames x {args.n_sources} sources"
            )
        truth = flat.reshape(t_len, args.n_sources, 4)
        # identities offset per sequence so records aggregate independently
        base = len(gt_frames)
        for t in range(t_len):
            gt_frames.append([(base + n, truth[t, n]) for n in range(args.n_sources)])
            pred_frames.append([(base + n, res["m"][t, n]) for n in range(n_src)])
    report = metrics.evaluate(gt_frames, pred_frames, iou_threshold=args.iou_threshold)
    text = metrics.format_report(report)
    print(text, end="")
    if args.out:
        fileformats.atomic_write_text(args.out, text)
    return 0


# --- make-mot3t -------------------------------------------------------------

MAKE_MOT3T_OPTIONS = {
    "root": _opt(str, None, "dataset root with <seq>/det/det.txt and <seq>/gt/gt.txt",
                 required=True),
    "frames": _opt(int, 60, "window length T"),
    "n_tracks": _opt(int, 3, "tracks per test sequence"),
    "iou_threshold": _opt(float, 0.5, "detection-to-truth matching threshold"),
    "normalize": _opt(bool, True, "divide pixel boxes by the image size"),
    "im_width": _opt(int, None, "image width when no seqinfo sidecar exists"),
    "im_height": _opt(int, None, "image height when no seqinfo sidecar exists"),
    "seed": _opt(int, 0, "root random seed"),
    "out": _opt(str, None, "observation output file", required=True),
    "out_truth": _opt(str, None, "ground-truth output file", required=True),
}


def cmd_make_mot3t(args):
    seq_dirs = dataio.find_mot_sequences(args.root)
    if not seq_dirs:
        raise CliError(f"no MOT-style sequences under {args.root}")
    rng = np.random.default_rng(args.seed)
    all_obs, all_truth = [], []
    total_skipped = 0
    for seq_dir in seq_dirs:
        dets = dataio.parse_mot_csv(os.path.join(seq_dir, "det", "det.txt"))
        gt = dataio.parse_mot_csv(os.path.join(seq_dir, "gt", "gt.txt"))
        labeled = dataio.match_det_to_gt(dets, gt, iou_threshold=args.iou_threshold)
        windows, skipped = dataio.build_mot3t(labeled, gt, args.frames, args.n_tracks, rng)
        total_skipped += skipped
        if args.normalize:
            info_path = os.path.join(seq_dir, "seqinfo.ini")
            if os.path.isfile(info_path):
                w, h = dataio.read_seqinfo(info_path)
            elif args.im_width and args.im_height:
                w, h = args.im_width, args.im_height
            else:
                raise CliError(f"{seq_dir}: no seqinfo.ini and no --im-width/--im-height")
        for win in windows:
            obs, truth = win.observations, win.truth
            if args.normalize:
                obs = [dataio.normalize_boxes(o, w, h) for o in obs]
                truth = dataio.normalize_boxes(truth, w, h)
            all_obs.append(obs)
            all_truth.append(truth.reshape(args.frames * args.n_tracks, 4))
    fileformats.write_observations(args.out, all_obs)
    fileformats.write_trajectories(args.out_truth, all_truth)
    print(f"built {len(all_obs)} test sequences from {len(seq_dirs)} videos "
          f"({total_skipped} windows skipped); wrote {args.out} / {args.out_truth}")
    return 0


# --- plot -------------------------------------------------------------------

PLOT_OPTIONS = {
    "results": _opt(str, None, "results file from `track`", required=True),
    "truth": _opt(str, None, "optional ground-truth trajectory file"),
    "obs": _opt(str, None, "optional observation file"),
    "n_sources": _opt(int, 3, "sources per sequence in the truth file"),
    "sequence": _opt(int, 0, "record index to plot"),
    "frames_list": _opt(str, None, "comma-separated frame indices (default: spread)"),
    "out": _opt(str, None, "SVG output file", required=True),
}


def cmd_plot(args):
    results = fileformats.read_results(args.results)
    if not results:
        raise CliError("empty results file")
    if not 0 <= args.sequence < len(results):
        raise CliError(f"sequence index {args.sequence} out of range")
    est = results[args.sequence]["m"]
    truth = None
    if args.truth:
        flat = fileformats.read_trajectories(args.truth)[args.sequence]
        truth = flat.reshape(est.shape[0], args.n_sources, 4)
    obs = None
    if args.obs:
        obs = fileformats.read_observations(args.obs)[args.sequence]
    frames = None
    if args.frames_list:
        frames = [int(x) for x in args.frames_list.split(",")]
    plotting.write_svg(args.out, est, truth=truth, observations=obs, frames=frames)
    print(f"wrote {args.out}")
    return 0


# --- entry point ------------------------------------------------------------

_SUBCOMMANDS = {
    "gen-data": (cmd_gen_data, GEN_DATA_OPTIONS, "generate synthetic trajectories or scenes"),
    "pretrain": (cmd_pretrain, PRETRAIN_OPTIONS, "pre-train a dynamical model"),
    "track": (cmd_track, TRACK_OPTIONS, "run a tracker over observation sequences"),
    "evaluate": (cmd_evaluate, EVALUATE_OPTIONS, "score tracking results"),
    "make-mot3t": (cmd_make_mot3t, MAKE_MOT3T_OPTIONS,
                   "build fixed-cardinality test sequences from MOTChallenge data"),
    "plot": (cmd_plot, PLOT_OPTIONS, "render tracking results to SVG"),
}


def build_parser():
    parser = argparse.ArgumentParser(prog="mixtrack",
                                     description="multi-object tracking toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_fn, options, help_) in _SUBCOMMANDS.items():
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", type=str, default=None,
                       help="JSON config file (flags override it)")
        _add_options(p, options)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    fn, options, _help = _SUBCOMMANDS[args.command]
    try:
        resolved = _resolve(args, options)
        return fn(resolved)
    except (CliError, fileformats.FormatError, dataio.DataError, srnn.ParamError,
            vem.TrackingError, trajgen.ConfigError, trajgen.TrajGenError,
            plotting.PlotError, ValueError, OSError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
