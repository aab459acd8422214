"""Standard vs SOAR on 2-d Gaussian blobs, with the masking diagnostics.

Uses the shipped config.  Expect the SOAR model's robust accuracy to sit
close to the standard model's: at this radius the blobs leave little room.
"""

import os

import numpy as np

from soarlab import evaluation as ev
from soarlab.config import load_config
from soarlab.regularizers import SoarConfig
from soarlab.training import TrainConfig, train

cfg = load_config(os.path.join(os.path.dirname(__file__), os.pardir, "configs", "blobs_soar.json"))
tr, te = cfg.load_split("train"), cfg.load_split("test")
init = cfg.build_model(tr.dim, tr.num_classes)
pgd20 = cfg.attacks["pgd20"]

runs = {
    "standard": TrainConfig(**{**cfg.train.__dict__, "method": "standard", "early_stop_metric": None,
                               "patience": None}),
    "soar-pgd1": cfg.train,
    "soar-zero": TrainConfig(**{**cfg.train.__dict__, "soar": SoarConfig(**{**cfg.train.soar.__dict__, "init": "zero"})}),
}

print(f"{'model':10s} {'clean':>6s} {'pgd20':>6s} {'conf':>6s} {'nz':>5s} {'sat':>6s} {'best ep':>7s}")
for name, tcfg in runs.items():
    model, rec = train(init, tr, tcfg)
    clean = np.mean(model.predict(te.X) == te.y)
    rob = ev.robust_accuracy(model, te, pgd20, seed=1)
    conf, _ = ev.confidence_stats(model, te, "clean")
    nz = ev.grad_nonzero_count(model, te)
    sat = ev.saturation_attack_accuracy(model, te, pgd20.step, seed=1)
    print(f"{name:10s} {clean:6.3f} {rob:6.3f} {conf:6.3f} {nz:5.2f} {sat:6.3f} {str(rec.best_epoch):>7s}")

# loss from the attack point back to the clean point for a few test examples
model = train(init, tr, runs["standard"])[0]
Xa = ev.attack_points(model, te.X[:3], te.y[:3], pgd20, seed=2)
for i in range(3):
    alphas, losses = ev.loss_interpolation(model, te.X[i], Xa[i], te.y[i], steps=6)
    print(f"example {i}: " + " ".join(f"{l:.3f}" for l in losses))
