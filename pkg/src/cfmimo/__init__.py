"""cfmimo: link-level simulation of port-selection CSI feedback and ZF precoding
in FDD cell-free massive MIMO downlink.

The package is organised bottom-up:

* ``quadform``  - inverse moments / density of quadratic forms in complex Gaussians
* ``scenario``  - geometry, path loss, port power profiles, port correlation
* ``channel``   - correlated port-coefficient sampling and antenna-domain channels
* ``ports``     - port selections (index sets per BS/user) and their file format
* ``feedback``  - EDT compression, scalar quantization, feedback overheads
* ``rate``      - closed-form per-user rate engine
* ``linksim``   - ZF precoding and Monte Carlo rate estimation
* ``search``    - greedy joint port selection and baselines
* ``experiments`` / ``cli`` - configuration-driven experiment runner
"""

from cfmimo.errors import (
    ConfigError,
    DivergentMomentError,
    FeasibilityError,
    PrecoderError,
    SelectionError,
    SimulationError,
    StatisticsError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DivergentMomentError",
    "FeasibilityError",
    "PrecoderError",
    "SelectionError",
    "SimulationError",
    "StatisticsError",
    "__version__",
]
