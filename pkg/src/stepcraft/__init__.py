"""Hierarchical footstep planning on a kinematic quadruped stepping
abstraction: a goal-conditioned stepping policy trained with PPO, and a
training-free goal selector that optimizes the learned value surface."""

__version__ = "0.1.0"
