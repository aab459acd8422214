"""The curvature bound on a single point, then the oracle suites.

For a small MLP we materialize the augmented Hessian, compare the bound to
the true maxima of the quadratic model over both balls, and show the FD
Hessian-vector product converging as h shrinks.
"""

import numpy as np

from soarlab import diffcore as dc
from soarlab import regularizers as reg
from soarlab.models import LinearRegressor, MlpClassifier
from soarlab.oracles import quadratic_linf_max, trust_region_max
from soarlab.rng import stream
from soarlab.verify import BoundsConfig, hvp_errors, run_all

g = stream(0, "demo", "bound")
model = MlpClassifier(4, (8, 8), 3, seed=1)
x, y, eps = g.normal(size=4), 2, 0.1

H = reg.exact_augmented_hessian(model, x, y)
grad, hess, d = H[:4, 4], H[:4, :4], 4
loss = dc.eval_loss(model, x, y)
bound = reg.prop1_bound(model, x, y, eps)
linf = quadratic_linf_max(grad, hess, eps, loss, 200_000, g)
l2, _ = trust_region_max(grad, hess, np.sqrt(d) * eps, loss)
print(f"loss {loss:.4f}  linf max {linf:.4f}  l2 max {l2:.4f}  bound {bound:.4f}")

z = g.normal(size=d + 1)
for h, e in zip((1e-2, 1e-3, 1e-4), hvp_errors(model, x, y, z)):
    print(f"FD-HVP h={h:g}: rel err {e:.2e}")

# one Gaussian sample can undershoot: zero curvature and a tiny radius
w = LinearRegressor(np.zeros(4))
x0 = np.ones(4)
true_max = dc.eval_loss(w, x0, 0.0)
draws = [reg.prop1_bound(w, x0, 0.0, 1e-4, mode="sampled", n=1, rng=stream(0, "demo", "jensen", k)) for k in range(50)]
print(f"\ntrue max {true_max:.4f}; single-sample bound below it in "
      f"{np.mean(np.array(draws) < true_max):.0%} of 50 draws")

print("\nquick oracle run:")
for r in run_all(BoundsConfig(instances=20, linf_samples=20_000, frobenius_samples=20_000)):
    print(f"  {r.name}: {'PASS' if r.passed else 'FAIL'}")
