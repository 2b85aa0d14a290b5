"""Minimal command router: commands register themselves, app.py mounts them"""
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Tuple


@dataclass(frozen=True)
class Argument:
    flags: Tuple[str, ...]
    options: Dict[str, Any] = field(default_factory=dict)


def argument(*flags: str, **options: Any) -> Argument:
    """Describe one argparse argument of a command"""
    return Argument(flags=tuple(flags), options=options)


@dataclass(frozen=True)
class Command:
    name: str
    help: str
    handler: Callable
    arguments: Tuple[Argument, ...] = ()


class CommandRouter:
    """Collects commands the way an API router collects endpoints"""

    def __init__(self):
        self.commands: List[Command] = []

    def command(self, name: str, help: str, arguments: Tuple[Argument, ...] = ()):
        def decorator(func: Callable) -> Callable:
            self.commands.append(Command(name=name, help=help, handler=func, arguments=tuple(arguments)))
            return func
        return decorator
