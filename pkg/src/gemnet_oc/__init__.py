"""Graph neural network force field with periodic kNN graphs and a quadruplet interaction hierarchy."""

__version__ = "0.1.0"
