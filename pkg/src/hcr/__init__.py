"""Hidden confounder removal for click/like recommendation via front-door adjustment."""

__version__ = "0.1.0"
