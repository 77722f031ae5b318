"""Learning-rate / regularization grid with a cached CNN (not packaged)."""
import sys
import time

import numpy as np

from nester import nn
from nester.config import TrainConfig
from nester.dataset import load_dataset
from nester.experiments import Model, evaluate, fit_model

t0 = time.time()


def log(msg):
    print(f"[{time.time() - t0:7.1f}s] {msg}", flush=True)


bundle = load_dataset("/tmp/cal_data_008.tsv")
params = nn.load_cnn("/tmp/cal_cnn_008.ckpt")
log("cache loaded")

grid = [
    dict(eta_cst=0.05, lambda_reg=1e-4, run_finetune=False),
    dict(eta_cst=0.05, lambda_reg=1e-2, run_finetune=True),
    dict(eta_cst=0.01, lambda_reg=1e-4, run_finetune=True),
    dict(eta_cst=0.005, lambda_reg=1e-4, run_finetune=True),
    dict(eta_cst=0.005, lambda_reg=1e-4, run_finetune=False),
]
for overrides in grid:
    config = TrainConfig(seed=20240).with_overrides(**overrides)
    t1 = time.time()
    model = fit_model("combined", bundle, 20, config, pretrained=params)
    r = evaluate(model, bundle.test, 8000)
    log(f"combined {overrides}: ({time.time() - t1:.0f}s) H={r.mean_hamming:.4f} "
        f"total={r.total_err:.4f}")
