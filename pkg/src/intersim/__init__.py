"""intersim: a signal-free intersection control testbed.

Microscopic, deterministic traffic simulation on cell-discretized
intersections, with a reservation arbiter that guarantees collision-free
motion, a sparse-coordination multi-agent DQN controller, fixed/actuated
signal and longest-queue-first baselines, and evaluation metrics including
post-encroachment time.
"""

__version__ = "0.1.0"
