"""
LOCC collision toolkit: learned local-crop collision detection with exact,
UCF-GJK and IS-CD baselines, a benchmark harness and a small rigid-body simulator.
"""
__version__ = "1.0.0"
