"""rdecomp: learn to decompose episodic returns into per-interval rewards
and use them in bias-corrected policy-gradient training, with an
exact-enumeration oracle for every gradient identity."""

__version__ = "0.1.0"
