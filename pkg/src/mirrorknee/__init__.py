"""Reinforcement-learning tuning of a four-phase knee impedance controller."""
