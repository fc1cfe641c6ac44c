"""
Backend package for the Fisheye Sense FastAPI service
"""

__version__ = "1.0.0"
