"""Numerical twistor correspondence for holomorphic disks with boundary on a totally real surface.

Modules:

* ``cp1_geometry``   two-chart Riemann sphere arithmetic, Moebius maps, circles
* ``standard_model`` closed-form disks of the real slice and the de Sitter oracle
* ``disk_solver``    spectral Newton solver for disks on a perturbed surface
* ``ew_reconstruct`` null cone, frame, connection and Einstein-Weyl audits
* ``geodesic_lab``   geodesics and incidence sets, cross-validated
* ``cli``            batch front-end
"""

__version__ = "0.1.0"
