"""Variant sweep against a cached CNN (not part of the package)."""
import os
import sys
import time

import numpy as np

from nester import nn
from nester.config import TrainConfig
from nester.dataset import NoiseConfig, generate_dataset, load_dataset, save_dataset
from nester.experiments import Model, evaluate, fit_model

flip = float(sys.argv[1])
names = sys.argv[2].split(",") if len(sys.argv) > 2 else [
    "distance", "combined", "refinement", "refinement+distance",
    "refinement+prediction",
]
t0 = time.time()


def log(msg):
    print(f"[{time.time() - t0:7.1f}s] flip={flip} {msg}", flush=True)


config = TrainConfig(seed=20240)
tag = str(flip).replace(".", "")
data_path = f"/tmp/cal_data_{tag}.tsv"
cnn_path = f"/tmp/cal_cnn_{tag}.ckpt"

if os.path.exists(data_path):
    bundle = load_dataset(data_path)
else:
    bundle = generate_dataset(8000, 2000, 20, NoiseConfig(flip, 1), seed=20240)
    save_dataset(bundle, data_path)
log("dataset ready")

if os.path.exists(cnn_path):
    params = nn.load_cnn(cnn_path)
else:
    rng = np.random.default_rng([config.seed, 101])
    params = nn.init_cnn(rng)
    params, _ = nn.pretrain_cnn(params, bundle.chunk(20), config.epochs_pretrain,
                                config.batch_size, rng, lr=config.eta_pretrain)
    nn.save_cnn(params, cnn_path)
log("cnn ready")

rep = evaluate(Model(name="cnn", kind="cnn", cnn=params), bundle.test, 8000)
log(f"cnn H={rep.mean_hamming:.4f} total={rep.total_err:.4f} syn={rep.syntactic_err:.4f} "
    f"sem={rep.semantic_err:.4f}")

for name in names:
    t1 = time.time()
    model = fit_model(name, bundle, 20, config, pretrained=params)
    r = evaluate(model, bundle.test, 8000)
    log(f"{name}: ({time.time() - t1:.0f}s) H={r.mean_hamming:.4f} total={r.total_err:.4f} "
        f"other={r.other_err:.4f}")
