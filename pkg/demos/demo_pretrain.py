"""Pre-train a small dynamical model on synthetic trajectories.

Uses a reduced dataset and epoch budget so the script finishes in about
a minute; the CLI `mixtrack pretrain` runs the same code with full-size
defaults.
"""

import numpy as np

from mixtrack import srnn, trajgen


def main():
    rng = np.random.default_rng(0)
    cfg = trajgen.TrajGenConfig(T=30)
    data = np.stack([trajgen.gen_box_trajectory(rng, cfg) for _ in range(300)])
    train, val = data[:270], data[270:]

    params = srnn.init_params(np.random.default_rng(1))
    tcfg = srnn.TrainConfig(max_epochs=30, batch_size=64, patience=30, seed=2)
    params, info = srnn.train(params, train, val, tcfg)

    first = info["history"][0]
    last = info["history"][-1]
    print("epochs run:", len(info["history"]))
    print("train ELBO: %.2f -> %.2f" % (first[1], last[1]))
    print("val   ELBO: %.2f -> %.2f (best %.2f)"
          % (first[2], last[2], info["best_val_elbo"]))

    srnn.save_params(params, "/tmp/demo_srnn.bin")
    reloaded = srnn.load_params("/tmp/demo_srnn.bin")
    same = all(np.array_equal(params[k], reloaded[k]) for k in params)
    print("checkpoint round-trip bit-exact:", same)


if __name__ == "__main__":
    main()
