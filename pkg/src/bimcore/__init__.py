"""BIMcore representation-information registry and OAIS packaging toolkit."""

__version__ = "0.1.0"
