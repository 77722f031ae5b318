"""Desk calibration for the acceptance thresholds (not part of the package)."""
import time

import numpy as np

from nester import nn, training
from nester.config import TrainConfig
from nester.dataset import NoiseConfig, generate_dataset
from nester.experiments import Model, evaluate, fit_model

t0 = time.time()


def log(msg):
    print(f"[{time.time() - t0:7.1f}s] {msg}", flush=True)


config = TrainConfig(seed=20240)
log("generating dataset 8000+2000 flip=0.02 shift=1")
bundle = generate_dataset(8000, 2000, 20, NoiseConfig(0.02, 1), seed=20240)
log("dataset done")

# stage 1 shared CNN at chunk 20
rng = np.random.default_rng([config.seed, 101])
params = nn.init_cnn(rng)
params, losses = nn.pretrain_cnn(params, bundle.chunk(20), config.epochs_pretrain,
                                 config.batch_size, rng, lr=config.eta_pretrain)
log(f"pretrain done, last losses {losses[-3:]}")

cnn_model = Model(name="cnn", kind="cnn", cnn=params)
rep = evaluate(cnn_model, bundle.test, 8000)
log(f"cnn: {rep}")

for name in ("distance", "cst", "combined", "refinement", "refinement+distance",
             "refinement+prediction"):
    t1 = time.time()
    model = fit_model(name, bundle, 20, config, pretrained=params)
    t2 = time.time()
    r = evaluate(model, bundle.test, 8000)
    log(f"{name}: train {t2 - t1:.0f}s eval {time.time() - t2:.0f}s -> {r}")
