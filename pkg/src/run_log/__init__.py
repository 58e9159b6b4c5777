from .client import init

__all__ = ["init"]
