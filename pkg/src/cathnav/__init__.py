"""cathnav: an endovascular navigation simulator with force sensing.

Articulated catheter dynamics inside convex-decomposed vessel geometry,
a POMDP environment for cannulation tasks, a PPO baseline, a statistical
force-validation toolkit, and a keyboard teleoperation service.
"""

__version__ = "0.1.0"
