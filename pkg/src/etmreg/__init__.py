"""etmreg: simulator for trace-unit resources used as memory-bandwidth regulators."""

__version__ = "0.1.0"
