"""Digital-twin framework for electrical/electronic systems.

Structured twin models, model management, a timestamped twin store,
FMEA/SPFM reliability analysis, DTMC health monitoring and a TCP
data flow between the twin and a simulated PWM DC-motor plant.
"""

__version__ = "0.1.0"
