"""
rankselect - ranking-and-selection constants, asymptotics and procedures
"""

__version__ = "1.0.0"
