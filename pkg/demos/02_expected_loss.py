"""The closed-form one-step expected loss versus its Monte-Carlo definition.

E[min(y, eta)] for the GP predictive y ~ N(mu, var): an extra evaluation can
only improve (or tie) the running minimum, so the loss never exceeds the
incumbent eta.  Run:  python demos/02_expected_loss.py
"""

import numpy as np

from glassesbo import expected_loss_1, gp_lcb, mpi

rng = np.random.default_rng(1)
eta = 0.0

print("mu     var   | closed form   Monte Carlo (1e6)")
for mu, var in [(0.0, 1.0), (-0.5, 0.25), (1.0, 4.0), (2.0, 0.01)]:
    y = rng.normal(mu, np.sqrt(var), size=1_000_000)
    mc = np.minimum(y, eta).mean()
    v = expected_loss_1(mu, var, eta)
    print(f"{mu:+.1f}  {var:5.2f} | {v:+12.5f}  {mc:+12.5f}")

print("\nvariance sweep at mu = eta: more uncertainty lowers the expected min")
for var in (0.0, 0.1, 0.5, 1.0, 2.0, 4.0):
    print(f"  var={var:4.1f}  EL={expected_loss_1(eta, var, eta):+.5f}")

print("\nbaseline criteria at (mu=0.3, var=0.49), eta=0:")
print(f"  MPI    = {mpi(0.3, 0.49, eta):.5f}   (probability of improving)")
print(f"  GP-LCB = {gp_lcb(0.3, 0.49, beta=1.0):+.5f}  (optimistic bound)")
