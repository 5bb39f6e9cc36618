"""Joint pose, inertia-tensor and depth-bias estimation for a tumbling target."""

__version__ = "0.1.0"
