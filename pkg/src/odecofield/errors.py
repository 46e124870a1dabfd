"""Exception hierarchy shared by the library and the command line."""


class OdecoError(Exception):
    """Base class for all library errors."""

    exit_code = 1


class InputError(OdecoError):
    """A file could not be read or parsed."""

    exit_code = 2

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class MeshError(InputError):
    """Malformed or degenerate mesh input."""


class ValidationError(OdecoError):
    """Inputs parsed but are inconsistent (bad indices, conflicting constraints)."""

    exit_code = 3

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class SolverError(OdecoError):
    """Numerical failure inside an optimization stage."""

    exit_code = 4
