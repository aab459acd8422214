"""Over-parameterized linear regression: why GD leaves the model attackable.

Only the first coordinate carries signal.  GD never touches the others, so
whatever the initializer put there stays and an l_inf attacker exploits it.
"""

import numpy as np

from soarlab import toy
from soarlab.rng import stream

spec = toy.ToySpec(d=10, sigma=1.0, eps=0.1, mu1=1.0, wstar1=1.0)
g = stream(0, "demo", "toy")

w0 = g.normal(0.0, spec.sigma, size=spec.d)
w_gd = toy.population_gd(spec, w0)
print("init      ", np.round(w0, 3))
print("after GD  ", np.round(w_gd, 3))
print("fixed pt  ", np.round(toy.gd_fixed_point(spec, w0), 3))

# clean loss is ~0 but the attacked loss is not
x = np.zeros(spec.d)
x[0] = 1.0
print(f"\nclean pop. loss       {toy.population_loss(w_gd, spec):.2e}")
print(f"attacked loss at x=e1 {toy.attacked_pointwise_loss(w_gd, x, spec.eps):.4f}")

# averaged over inits the damage grows like d^2
print("\n   d   predicted   monte carlo")
for d in (2, 10, 100):
    pred = toy.expected_attacked_loss(d, 1.0, 1.0)
    mc = toy.monte_carlo_attacked_loss(d, 1.0, 1.0, 100_000, stream(0, "demo", "mc", d))
    print(f"{d:4d} {pred:11.4f} {mc:13.4f}")

# the robustified objective shrinks the dead coordinates, ridge only scales w_1
w_rob = toy.robustified_gd(spec, w0)
print("\nrobust GD ", np.round(w_rob, 3))
print("ridge(0.5)", np.round(toy.ridge_solution(0.5, spec.second_moment, spec.wstar1, spec.d), 3))

# second-order Taylor is exact for this loss
first, second, exact = toy.taylor_losses(w0, spec)
print(f"\nfirst-order {first:.6f}  second-order {second:.6f}  exact {exact:.6f}")
