"""Built-in validation scenarios (partial configurations merged over the defaults)."""
import math

TWO_PI = 2 * math.pi
EPSILONS = [1 / 16, 1 / 32, 1 / 64]
CHECKPOINTS = [0.25, 0.5, 0.75, 1.0]

# Free motion: V = 0, W = 0.  The short direct period puts the second band
# far above the first, so p0 = 1 is deep inside an isolated band 1.
FREE = {
    "name": "free",
    "lattice": {"dim": 1, "period": TWO_PI / 8},
    "potential": {"coefficients": [], "cutoff": 40.0},
    "external": {"kind": "zero"},
    "initial": {"q0": [math.pi], "p0": [1.0], "N": math.pi ** -0.25,
                "A0_re": [[1.0]], "A0_im": [[0.0]], "B0_re": [[0.0]], "B0_im": [[1.0]]},
    "run": {"epsilons": EPSILONS, "checkpoints": CHECKPOINTS, "box_length": [TWO_PI],
            "n_points": [4096]},
    "checks": {"corrector_max": 1e-6, "symplectic_max": 1e-9, "hamiltonian_drift_max": 1e-8},
}

# Mathieu: V = 2 cos z, W = 0.1 cos x.  A width-2 Gaussian keeps the
# two-scale overlap of the envelope tails small already at eps = 1/16.
MATHIEU = {
    "name": "mathieu-1d",
    "lattice": {"dim": 1, "period": TWO_PI},
    "potential": {"coefficients": [[[1], 1.0, 0.0]], "cutoff": 10.0},
    "external": {"kind": "cosine_sum", "amplitudes": [0.1], "wavevectors": [[1.0]],
                 "phases": [0.0]},
    "initial": {"q0": [2.5], "p0": [0.3], "N": math.pi ** -0.25,
                "A0_re": [[2.0]], "A0_im": [[0.0]], "B0_re": [[0.0]], "B0_im": [[0.5]]},
    "run": {"epsilons": EPSILONS, "checkpoints": CHECKPOINTS, "box_length": [TWO_PI],
            "n_points": [4096]},
    "checks": {"corrected_slope": [0.8, 1.2], "leading_slope": [0.35, 0.65],
               "symplectic_max": 1e-9, "hamiltonian_drift_max": 1e-8,
               "gaussian_grid_gap_max": 1e-6, "observable_slope_min": 1.2,
               "position_slope_min": 0.8},
}

# Inversion-asymmetric square lattice: V = 2 cos z1 + 2 cos z2 - 2 sin(z1 + z2).
# No origin shift makes all three phases 0 or pi, so the curvature is nonzero.
ASYM_2D = {
    "name": "asym-2d",
    "lattice": {"dim": 2, "period": TWO_PI},
    "potential": {"coefficients": [[[1, 0], 1.0, 0.0], [[0, 1], 1.0, 0.0], [[1, 1], 0.0, 1.0]],
                  "cutoff": 5.0},
    "external": {"kind": "cosine_sum", "amplitudes": [0.5, 0.5], "wavevectors": [[1.0, 0.0], [0.0, 1.0]],
                 "phases": [0.0, 0.0]},
    "initial": {"q0": [2.5, 2.0], "p0": [0.1, 0.2], "N": 1 / math.sqrt(math.pi),
                "A0_re": [[1.0, 0.0], [0.0, 1.0]], "A0_im": [[0.0, 0.0], [0.0, 0.0]],
                "B0_re": [[0.0, 0.0], [0.0, 0.0]], "B0_im": [[1.0, 0.0], [0.0, 1.0]]},
    "run": {"epsilons": EPSILONS, "checkpoints": CHECKPOINTS, "direct": False, "system": "canonical"},
    "geometry": {"grid": 32, "curvature_rtol": 1e-5,
                 "symmetric_coefficients": [[[1, 0], 1.0, 0.0], [[0, 1], 1.0, 0.0]]},
    "checks": {"symplectic_max": 1e-9, "hamiltonian_drift_max": 1e-8},
}

SCENARIOS = {"free": FREE, "mathieu-1d": MATHIEU, "asym-2d": ASYM_2D}
