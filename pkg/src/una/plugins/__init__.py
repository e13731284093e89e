"""External optimizer clients that talk to the central service over the wire."""

from .greedy import EchoPlugin, GreedyPlugin, run_plugin

__all__ = ["EchoPlugin", "GreedyPlugin", "run_plugin"]
