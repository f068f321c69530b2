"""
Collect and report problems found while checking qbnn records.

A Validation is passed down a tree of models and fields: each level adds
its field name to the prefix, so messages read like
``train.2.pixels: list must have 25 elements, but has 24``.
"""
from contextlib import contextmanager
from typing import TYPE_CHECKING, List, Optional, Sequence, Union

if TYPE_CHECKING:
    from . import fields


class ValidationError:
    """
    One problem found on a field, qualified by the path that leads to it
    """
    def __init__(self, prefix: Optional[str], field: "fields.Field", msg: str, code: Optional[str] = None):
        self.prefix = prefix
        self.field = field
        self.msg = msg
        self.code = code

    @property
    def qualified_field(self) -> str:
        if self.prefix is None:
            return self.field.name
        elif self.field.name is None:
            return self.prefix
        else:
            return self.prefix + "." + self.field.name

    def __str__(self):
        if self.code is not None:
            return "{}: [{}] {}".format(self.qualified_field, self.code, self.msg)
        else:
            return "{}: {}".format(self.qualified_field, self.msg)


class InvalidModelError(ValueError):
    """
    Raised by Validation.raise_errors when a record does not validate
    """
    def __init__(self, what: str, errors: List[ValidationError]):
        self.what = what
        self.errors = errors
        super().__init__("{} is not valid: {}".format(what, "; ".join(str(e) for e in errors)))


Fields = Union["fields.Field", Sequence["fields.Field"]]


class Validation:
    def __init__(self,
                 prefix: Optional[str] = None,
                 warnings: Optional[List[ValidationError]] = None,
                 errors: Optional[List[ValidationError]] = None):
        self.prefix = prefix
        # Sub-validations share the lists of their parent
        self.warnings: List[ValidationError] = warnings if warnings is not None else []
        self.errors: List[ValidationError] = errors if errors is not None else []

    def with_prefix(self, prefix: str) -> "Validation":
        return Validation(prefix, self.warnings, self.errors)

    @contextmanager
    def subfield(self, name: str):
        if self.prefix is None:
            prefix = name
        else:
            prefix = self.prefix + "." + name
        yield self.with_prefix(prefix)

    def _annotate(self, dest: List[ValidationError], field: Fields, msg: str, code: Optional[str]):
        from . import fields
        if isinstance(field, fields.Field):
            dest.append(ValidationError(self.prefix, field, msg, code))
        else:
            for f in field:
                dest.append(ValidationError(self.prefix, f, msg, code))

    def add_warning(self, field: Fields, msg: str, code: Optional[str] = None):
        self._annotate(self.warnings, field, msg, code)

    def add_error(self, field: Fields, msg: str, code: Optional[str] = None):
        self._annotate(self.errors, field, msg, code)

    @property
    def ok(self) -> bool:
        return not self.errors

    def raise_errors(self, what: str):
        """
        Raise InvalidModelError if any error has been collected
        """
        if self.errors:
            raise InvalidModelError(what, list(self.errors))
