"""Simulation, pricing and hedging in markets driven by a shadow-stock state price deflator."""

__version__ = "0.1.0"
