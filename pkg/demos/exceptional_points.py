"""Locate exceptional points of the post-selected Liouvillian.

Sweeping the drive and tracking the nine eigenvalue branches shows where
branches coalesce.  With perfect detection the NoJump generator has a
third-order point at the effective-Hamiltonian EP (Gamma_g - Gamma_e) / 4.
Losing photons at D_e splits it into two second-order points.
"""
import numpy as np

from nhqubit import SystemParams, detect_eps, ep_of_heff, sweep_spectrum

base = SystemParams(gamma_e=0.2, gamma_g=4.0)
grid = np.linspace(0.0, 3.0, 301)
print(f"EP of H_eff: omega = {ep_of_heff(base):.4f} MHz")

for builder, eta_e in (("nj", 1.0), ("nj", 0.6), ("j", 1.0)):
    sweep = sweep_spectrum(base.replace(eta_e=eta_e), grid, builder)
    print(f"\nbuilder {builder}, eta_e = {eta_e}")
    for ep in detect_eps(sweep):
        print(f"  omega* = {ep.omega_star:.5f}  order {ep.order}  "
              f"lambda = {ep.eigenvalue.real:+.4f}{ep.eigenvalue.imag:+.4f}i  "
              f"cluster {ep.cluster_size}, eigenvectors {ep.gram_rank}")
