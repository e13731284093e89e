"""Simulated UAV testbed: arena, vision localization, waypoint control,
coverage optimization, ad-hoc mesh networking, and a central node service."""

__version__ = "0.1.0"
