"""Frequency-secure look-ahead power dispatch.

Co-optimizes power schedules, reserves, and the virtual-inertia/droop
parameters of renewable and storage units under frequency-security
constraints: an aggregated frequency-response model supplies RoCoF,
steady-state, and nadir metrics; the nonlinear nadir constraint is
replaced by a conservative convex-hull linearization; renewable
uncertainty enters through Gaussian-mixture chance constraints; the
resulting convex QP is solved inside a receding-horizon driver.
"""

__version__ = "0.1.0"
