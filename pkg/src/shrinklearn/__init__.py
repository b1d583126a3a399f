"""Learning MSE-optimal thresholding nonlinearities for unrolled ISTA."""

__version__ = "0.1.0"
