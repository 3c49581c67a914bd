"""Star-network large-deviations toolkit

Rate functions, path costs, tail-decay estimates and an exact simulator for
star-shaped bandwidth-sharing networks under the min policy.
"""

__version__ = "1.0.0"
