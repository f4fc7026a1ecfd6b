from .commands import CommandKind, apply_command
from .core import HabilitationService, Response
from .http import BackgroundServer, make_server, parse_listen
from .journal import Journal

__all__ = [
    "BackgroundServer",
    "CommandKind",
    "HabilitationService",
    "Journal",
    "Response",
    "apply_command",
    "make_server",
    "parse_listen",
]
