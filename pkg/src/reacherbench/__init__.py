"""Reacher benchmark tasks on a kinematic arm, with a numpy DDPG+HER learner."""

__version__ = "0.1.0"
