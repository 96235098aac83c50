from . import exceptions, logger

__all__ = ['exceptions', 'logger']
