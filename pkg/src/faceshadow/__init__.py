"""Real-time facial expression shadowing over a deterministic toy face world."""

__version__ = "0.1.0"
