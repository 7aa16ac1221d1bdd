"""Near-ring algorithm trees on framed quiver representations and quantum finite automata."""

__version__ = "0.1.0"
