"""Exception types shared across textforge."""


class TextforgeError(Exception):
    """Base class for all textforge errors."""


class SingularSystem(TextforgeError):
    pass


class DegenerateChain(TextforgeError):
    pass


class DegenerateGeometry(TextforgeError):
    pass


class EmptyText(TextforgeError, ValueError):
    pass


class AssetError(TextforgeError):
    """A font, background or corpus file is missing or unreadable."""

    def __init__(self, message, path=None):
        super().__init__(message if path is None else f"{message}: {path}")
        self.path = path


class LayoutOverflow(TextforgeError):
    pass


class NonSquareInput(TextforgeError, ValueError):
    pass


class EmptyIntersection(TextforgeError):
    pass


class EmptyPool(TextforgeError):
    pass


class UnsupportedSymbol(TextforgeError, ValueError):
    def __init__(self, symbols):
        self.symbols = sorted(set(symbols))
        super().__init__("unsupported symbol(s): " + ", ".join(repr(s) for s in self.symbols))


class LengthMismatch(TextforgeError, ValueError):
    pass


class EmptyAfterFilter(TextforgeError):
    pass


class EmptyInput(TextforgeError, ValueError):
    pass
