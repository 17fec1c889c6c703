"""
Adversarial Go Lab - Middleware Package
"""

from .logging import logged_command

__all__ = ["logged_command"]
