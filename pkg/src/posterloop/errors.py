"""Exception hierarchy shared by every posterloop module."""

from __future__ import annotations


class PosterloopError(Exception):
    """Base class for all errors raised by this package."""


class InvalidLayout(PosterloopError):
    def __init__(self, violations):
        self.violations = list(violations)
        detail = "; ".join(str(v) for v in self.violations) or "invalid layout"
        super().__init__(detail)


class LayoutParseError(PosterloopError):
    """Layout JSON does not follow the canonical schema."""


class EmptyCorpus(PosterloopError):
    pass


class DuplicateIdError(PosterloopError):
    pass


class DimensionMismatch(PosterloopError):
    pass


class ZeroNorm(PosterloopError):
    pass


class DecodeError(PosterloopError):
    pass


class MissingAsset(PosterloopError):
    def __init__(self, element_id: str, ref: str | None = None):
        self.element_id = element_id
        self.ref = ref
        super().__init__(f"asset for element {element_id!r} not found: {ref!r}")


class EmptyRetrieval(PosterloopError):
    pass


class TransportError(PosterloopError):
    pass


class MalformedResponse(PosterloopError):
    pass


class UnknownElement(PosterloopError):
    pass


class ManifestNotFound(PosterloopError):
    pass


class ManifestParseError(PosterloopError):
    pass
