"""Single-qubit gate calibration toolkit.

Simulates a weakly measured qubit in a non-Markovian environment, runs the
real-time optimal state estimator (ROSE) and the pure-state estimator (PSE)
on the measurement record, and calibrates DRAG pulse parameters with a
Gaussian-process Bayesian optimizer.

Unit convention: angular frequencies in rad/ns, times in ns. A lab value
quoted in MHz enters as ``2*pi*f*1e-3`` rad/ns (see :func:`qcal.env.mhz`).
"""

__version__ = "0.1.0"

from .env import EnvParams, mhz, ghz
from .pulse import PulseParams
from .dynamics import TrajectoryRecord, simulate_trajectory, simulate_pure
from .fidelity import GateSpec, FidelityReport, gate_fidelity

__all__ = [
    "EnvParams",
    "PulseParams",
    "TrajectoryRecord",
    "GateSpec",
    "FidelityReport",
    "simulate_trajectory",
    "simulate_pure",
    "gate_fidelity",
    "mhz",
    "ghz",
    "__version__",
]
