"""Noise-level sweep for the acceptance margins (not part of the package)."""
import sys
import time

import numpy as np

from nester import nn
from nester.config import TrainConfig
from nester.dataset import NoiseConfig, generate_dataset
from nester.experiments import Model, evaluate, fit_model

flip = float(sys.argv[1])
t0 = time.time()


def log(msg):
    print(f"[{time.time() - t0:7.1f}s] flip={flip} {msg}", flush=True)


config = TrainConfig(seed=20240)
bundle = generate_dataset(8000, 2000, 20, NoiseConfig(flip, 1), seed=20240)
log("dataset done")

rng = np.random.default_rng([config.seed, 101])
params = nn.init_cnn(rng)
params, losses = nn.pretrain_cnn(params, bundle.chunk(20), config.epochs_pretrain,
                                 config.batch_size, rng, lr=config.eta_pretrain)
log(f"pretrain done, last loss {losses[-1]:.4f}")
rep = evaluate(Model(name="cnn", kind="cnn", cnn=params), bundle.test, 8000)
log(f"cnn: {rep}")

for name in ("distance", "combined", "refinement", "refinement+distance",
             "refinement+prediction", "cst"):
    t1 = time.time()
    model = fit_model(name, bundle, 20, config, pretrained=params)
    r = evaluate(model, bundle.test, 8000)
    log(f"{name}: ({time.time() - t1:.0f}s) -> H={r.mean_hamming:.4f} total={r.total_err:.4f} "
        f"syn={r.syntactic_err:.4f} sem={r.semantic_err:.4f} other={r.other_err:.4f}")
