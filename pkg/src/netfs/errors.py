"""Exception hierarchy shared by the store, the schema layer and the tools.

Every error carries an ``errno`` (used by the mount adapter) and an
``exit_code`` (used by the command line tools), so callers never need a
separate mapping table.
"""

import errno as _errno


class NetFSError(Exception):
    errno = _errno.EIO
    exit_code = 70

    def __init__(self, message="", path=None):
        super().__init__(message or self.__class__.__name__)
        self.path = path


class StoreError(NetFSError):
    pass


class NotFound(StoreError):
    errno = _errno.ENOENT
    exit_code = 2


class DanglingLink(NotFound):
    exit_code = 3


class NotADirectory(StoreError):
    errno = _errno.ENOTDIR
    exit_code = 4


class IsADirectory(StoreError):
    errno = _errno.EISDIR
    exit_code = 5


class AlreadyExists(StoreError):
    errno = _errno.EEXIST
    exit_code = 6


class InvalidName(StoreError):
    errno = _errno.EINVAL
    exit_code = 7


class PermissionDenied(StoreError):
    errno = _errno.EACCES
    exit_code = 8


class DirectoryNotEmpty(StoreError):
    errno = _errno.ENOTEMPTY
    exit_code = 9


class NotALink(StoreError):
    errno = _errno.EINVAL
    exit_code = 10


class LoopDetected(StoreError):
    errno = _errno.ELOOP
    exit_code = 11


class MalformedSnapshot(StoreError):
    errno = _errno.EINVAL
    exit_code = 12


class InvalidArgument(StoreError):
    errno = _errno.EINVAL
    exit_code = 13


# schema layer

class SchemaError(NetFSError):
    errno = _errno.EINVAL


class NotASchemaPoint(SchemaError):
    exit_code = 20


class FieldError(SchemaError):
    """A single flow/port file failed its grammar; ``field`` names it."""

    exit_code = 21

    def __init__(self, message="", path=None, field=None):
        super().__init__(message, path)
        self.field = field


class UnknownField(FieldError):
    exit_code = 21


class ParseError(FieldError):
    exit_code = 22


class RangeError(ParseError):
    exit_code = 23


class ValidationFailed(SchemaError):
    exit_code = 24

    def __init__(self, message="", path=None, field=None):
        super().__init__(message, path)
        self.field = field


# views

class ViewError(NetFSError):
    errno = _errno.EINVAL


class MemberUnknown(ViewError):
    exit_code = 30


class FlowspaceNotContained(ViewError):
    exit_code = 31


class EmptyIntersection(ViewError):
    exit_code = 32


# transport / endpoint

class StoreUnreachable(NetFSError):
    errno = _errno.ECONNREFUSED
    exit_code = 40


class MountpointBusy(NetFSError):
    errno = _errno.EBUSY
    exit_code = 41


class MountUnavailable(NetFSError):
    errno = _errno.ENOSYS
    exit_code = 42


_BY_NAME = {}


def _collect(cls):
    _BY_NAME[cls.__name__] = cls
    for sub in cls.__subclasses__():
        _collect(sub)


_collect(NetFSError)


def error_class(name):
    """Look an exception class up by name (used to rebuild remote errors)."""
    return _BY_NAME.get(name, NetFSError)
