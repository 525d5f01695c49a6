"""Goal-conditioned value learning through discrete-time survival analysis.

The value of the -1-per-step goal-reaching reward is minus the discounted sum
of the survival curve of the first hitting time.  This package fits hazard
models to censored hitting-time data, turns them into values and extracts
policies with advantage-weighted regression on gridworld mazes.
"""

__version__ = "0.1.0"
