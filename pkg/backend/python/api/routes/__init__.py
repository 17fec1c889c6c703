"""
Adversarial Go Lab - Command Routes
"""

from .evaluation import cmd_elo, cmd_match, cmd_robustness
from .gtp import cmd_gtp
from .heatmap import cmd_heatmap
from .iterate import cmd_iterate
from .selfplay import cmd_selfplay, cmd_victimplay

__all__ = [
    "cmd_selfplay",
    "cmd_victimplay",
    "cmd_iterate",
    "cmd_match",
    "cmd_elo",
    "cmd_robustness",
    "cmd_heatmap",
    "cmd_gtp",
]
