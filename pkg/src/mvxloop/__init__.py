"""Multi-version execution for event-loop programs.

A coordinator records every source of non-determinism a leader client
consumes (user events, timer firings, stateful-element changes, text
selections, random numbers), replays the log into a follower to transfer
state, keeps both synchronized live, and swaps their roles on demand.
"""

__version__ = "0.1.0"
