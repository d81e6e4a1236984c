"""Discrete-event system-level simulator of the 802.11be MAC.

The package layers a deterministic event kernel (``engine``), a PHY abstraction
(``phy``), EDCA queues and aggregation (``edca``), multi-link devices (``mlo``),
OFDMA scheduling (``ofdma``), scenario generation (``scenario``) and the
network simulation (``network``) under a campaign harness (``harness``, ``cli``).
"""

from .network import RunResult, simulate
from .scenario import ScenarioConfig, case_config, latency_config

__all__ = ["RunResult", "ScenarioConfig", "case_config", "latency_config", "simulate"]
__version__ = "0.1.0"
