from __future__ import annotations

import math
from typing import Any, Generic, List, Optional, Sequence, TypeVar

from . import validation

T = TypeVar("T")

# Seeds are unsigned 64-bit integers
MAX_SEED = 2 ** 64 - 1


class Field(Generic[T]):
    """
    Description of a value in a qbnn record: how to clean it, validate it
    and turn it into JSON or a CSV cell.

    It does not contain the value itself.
    """
    def __init__(self,
                 null: bool = False,
                 default: Optional[T] = None,
                 help: Optional[str] = None):
        self.name: Optional[str] = None
        self.null = null
        self.default = default
        self.help = help

    def set_name(self, name: Optional[str]):
        """
        Set the field name, as found in the Model class body
        """
        self.name = name

    def get_construct_default(self) -> Optional[T]:
        """
        Value for a field not passed to the Model constructor
        """
        return None

    def has_value(self, value: Optional[T]) -> bool:
        return value is not None

    def validate(self, validation: "validation.Validation", value: Any) -> Optional[T]:
        """
        Annotate validation with the problems of value, and return it cleaned
        """
        try:
            value = self.clean_value(value)
        except (TypeError, ValueError) as e:
            validation.add_error(self, str(e))

        if not self.null and not self.has_value(value):
            validation.add_error(self, "missing value")

        return value

    def clean_value(self, value: Any) -> Optional[T]:
        if value is None:
            return self.default
        return value

    def to_jsonable(self, value: Optional[T]) -> Any:
        return self.clean_value(value)

    def to_str(self, value: Optional[T]) -> str:
        """
        Format value as a CSV cell that clean_value reads back.

        Unset values become the empty string.
        """
        value = self.clean_value(value)
        if not self.has_value(value):
            return ""
        return str(value)


class ChoicesField(Field[T]):
    def __init__(self, choices: Optional[Sequence[T]] = None, **kw):
        super().__init__(**kw)
        self.choices: Optional[List[Optional[T]]] = None
        if choices is not None:
            self.choices = [self.clean_value(c) for c in choices]

    def validate(self, validation: "validation.Validation", value: Optional[T]):
        value = super().validate(validation, value)
        if value is not None and self.choices is not None and value not in self.choices:
            validation.add_error(self, "{!r} is not a valid choice for this field".format(value))
        return value


class NumberField(ChoicesField[T]):
    """
    Numeric field with an optional closed range
    """
    # Python type of cleaned values
    number_type: type = int

    def __init__(self, min_value: Optional[T] = None, max_value: Optional[T] = None, **kw):
        self.min_value = min_value
        self.max_value = max_value
        super().__init__(**kw)

    def validate(self, validation, value):
        value = super().validate(validation, value)
        if not self.has_value(value) or not isinstance(value, self.number_type):
            return value
        if self.min_value is not None and value < self.min_value:
            validation.add_error(self, "{!r} should be at least {}".format(value, self.min_value))
        if self.max_value is not None and value > self.max_value:
            validation.add_error(self, "{!r} should be at most {}".format(value, self.max_value))
        return value


class IntegerField(NumberField[int]):
    number_type = int

    def clean_value(self, value):
        value = super().clean_value(value)
        if value is None:
            return value
        # numpy integers and floats from JSON files end up here too
        if isinstance(value, float) or (hasattr(value, "is_integer") and not isinstance(value, int)):
            if not float(value).is_integer():
                raise ValueError("{!r} is not an integer".format(value))
        return int(value)


class SeedField(IntegerField):
    """
    Master or derived random seed
    """
    def __init__(self, **kw):
        kw.setdefault("default", 0)
        super().__init__(min_value=0, max_value=MAX_SEED, **kw)


class BipolarField(IntegerField):
    """
    A pixel, weight, bias or activation: either -1 or +1
    """
    def __init__(self, **kw):
        super().__init__(choices=(-1, 1), **kw)


class FloatField(NumberField[float]):
    number_type = float

    def clean_value(self, value):
        value = super().clean_value(value)
        if value is None:
            return value
        try:
            value = float(value)
        except (TypeError, ValueError):
            raise TypeError("{!r} cannot be converted to float".format(value))
        if not math.isfinite(value):
            raise ValueError("{!r} is not a finite number".format(value))
        return value

    def to_str(self, value):
        value = self.clean_value(value)
        if not self.has_value(value):
            return ""
        # repr is the shortest string that parses back to the same float
        return repr(value)


class StringField(ChoicesField[str]):
    def clean_value(self, value):
        value = super().clean_value(value)
        if value is None:
            return value
        return str(value)


class BooleanField(Field[bool]):
    TRUE = ("true", "yes", "1")
    FALSE = ("false", "no", "0")

    def clean_value(self, value):
        value = super().clean_value(value)
        if value is None:
            return value
        if isinstance(value, str):
            lower = value.strip().lower()
            if lower in self.TRUE:
                return True
            if lower in self.FALSE:
                return False
            raise ValueError("{!r} is not a boolean value".format(value))
        return bool(value)

    def to_str(self, value):
        value = self.clean_value(value)
        if not self.has_value(value):
            return ""
        return "true" if value else "false"


class ListField(Field[List[T]]):
    """
    List of values all described by the same field
    """
    def __init__(self, field: Field[T], length: Optional[int] = None, min_num: int = 0, **kw):
        super().__init__(**kw)
        self.field = field
        self.length = length
        self.min_num = min_num

    def set_name(self, name):
        super().set_name(name)
        self.field.set_name(None)

    def get_construct_default(self):
        return []

    def clean_value(self, value):
        value = super().clean_value(value)
        if value is None:
            return value
        if isinstance(value, (str, bytes)):
            raise TypeError("{!r} is not a list".format(value))
        return [self.field.clean_value(val) for val in value]

    def has_value(self, value):
        return value is not None and len(value) > 0

    def validate(self, validation, value):
        value = super().validate(validation, value)
        if not self.has_value(value) or not isinstance(value, list):
            return value
        if self.length is not None and len(value) != self.length:
            validation.add_error(self, "list must have {} elements, but has {}".format(self.length, len(value)))
        if len(value) < self.min_num:
            validation.add_error(
                    self, "list must have at least {} elements, but has only {}".format(self.min_num, len(value)))
        for idx, val in enumerate(value):
            with validation.subfield(f"{self.name}.{idx}") as sub:
                self.field.validate(sub, val)
        return value

    def to_jsonable(self, value):
        value = self.clean_value(value)
        if not self.has_value(value):
            return None
        return [self.field.to_jsonable(val) for val in value]

    def to_str(self, value):
        value = self.clean_value(value)
        if not self.has_value(value):
            return ""
        return " ".join(self.field.to_str(v) for v in value)


class ModelField(Field):
    """
    Nested record
    """
    def __init__(self, model, **kw):
        super().__init__(**kw)
        self.model = model

    def __repr__(self):
        return "ModelField({})".format(self.model.__name__)

    def get_construct_default(self):
        # Optional records start out absent
        if self.null:
            return None
        return self.model()

    def clean_value(self, value):
        value = super().clean_value(value)
        if value is None:
            return value
        return self.model.clean_value(value)

    def has_value(self, value):
        return value is not None and value.has_value()

    def validate(self, validation, value):
        value = super().validate(validation, value)
        if self.has_value(value):
            with validation.subfield(self.name) as sub:
                value.validate(sub)
        return value

    def to_jsonable(self, value):
        value = self.clean_value(value)
        if not self.has_value(value):
            return None
        return value.to_jsonable()


class ModelListField(ModelField):
    """
    List of nested records of the same model
    """
    def __init__(self, model, min_num: int = 0, **kw):
        super().__init__(model, **kw)
        self.min_num = min_num

    def get_construct_default(self):
        return []

    def clean_value(self, value):
        if value is None:
            value = self.default
        if value is None:
            return value
        return [self.model.clean_value(val) for val in value]

    def has_value(self, value):
        return value is not None and any(el is not None and el.has_value() for el in value)

    def validate(self, validation, value):
        value = Field.validate(self, validation, value)
        if not self.has_value(value):
            return value
        if len(value) < self.min_num:
            validation.add_error(
                    self, "list must have at least {} elements, but has only {}".format(self.min_num, len(value)))
        for idx, val in enumerate(value):
            with validation.subfield(f"{self.name}.{idx}") as sub:
                val.validate(sub)
        return value

    def to_jsonable(self, value):
        value = self.clean_value(value)
        if not self.has_value(value):
            return None
        return [val.to_jsonable() for val in value]
