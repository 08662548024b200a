from .exceptions import CaviLabError

__all__ = ['CaviLabError']
