"""Neonatal cause-of-death estimation pipeline.

Builds cause-specific neonatal mortality estimates from three input streams:
vital-registration cause counts, multi-cause study observations, and national
covariate series. Countries with usable vital registration get direct
proportional distributions; the rest are routed to one of two multinomial
models (a seven-cause low-mortality model and an eight-cause high-mortality
model) and the predicted cause fractions are applied to death envelopes.
"""
__version__ = "0.1.0"
