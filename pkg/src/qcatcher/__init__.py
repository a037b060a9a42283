"""Quantum catcher: trapping and cooling particles between a moving atom
diode and a moving atomic mirror.

Classical point particles are propagated exactly by an event-driven engine;
1D wavepackets are propagated on a grid with a split-operator scheme and a
quantum-jump unraveling of the diode. A dense three-level master-equation
integrator serves as ground truth at toy scale.
"""

__version__ = "0.1.0"
