"""
Descending a two-layer energy
=============================

Runs the gradient flow of the visible/hidden energy and shows that the
energy only goes down, then compares the end point with the effective
energy obtained by minimising out the hidden units.
"""

import numpy as np

from strokemem import energy

rng = np.random.default_rng(0)

# %%
# Quadratic hidden potential.  The joint energy is bounded below only when
# the weight matrix has spectral norm at most one, so rescale it to 0.9.
w = rng.normal(size=(4, 8))
w *= 0.9 / np.linalg.norm(w, 2)
model = energy.EnergyModel(w, energy.QUADRATIC, tau_x=1.0, tau_y=0.1, dt=1e-3)

traj = energy.descend(model, rng.normal(size=8), rng.normal(size=4), 10_000)
print("energy at steps 0, 100, 1000, 10000:", traj.energy[[0, 100, 1000, 10_000]].round(6))
print("steps where energy rose:", energy.lyapunov_violations(traj).size)

# %%
# For the quadratic potential the effective energy is 1/2 x^T (I - W^T W) x.
x = traj.x[-1]
J = energy.quadratic_effective_coupling(model)
print("E_eff(x) numeric:", energy.effective_energy(model, x))
print("E_eff(x) closed :", 0.5 * x @ x - 0.5 * x @ J @ x)

# %%
# A quartic potential gives a sharper effective nonlinearity Phi(u) = 27 u^4 / 4.
for u in (0.0, 0.5, 1.0):
    print(f"Phi({u}) = {energy.phi_from_potential(energy.QUARTIC, u) + 0.0:.6f}")
