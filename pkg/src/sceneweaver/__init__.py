"""Instruction-driven 3D scene editing, simulation, and compositing engine."""

__version__ = "0.1.0"
