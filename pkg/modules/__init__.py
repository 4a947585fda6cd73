"""
flocksim modules: fractional Euler-alignment simulator and verification harness
"""

__version__ = "1.0.0"
