"""Self-similar corotational wave maps: profiles, regularisation and evolution."""

__version__ = "0.1.0"
