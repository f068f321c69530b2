from __future__ import annotations

import copy
from typing import Any, Dict, Optional, Tuple, TypeVar

from .fields import Field, ModelField
from .validation import Validation

M = TypeVar("M", bound="Model")


class ModelBase:
    __slots__ = ()


class ModelMetaclass(type):
    """
    Collect Field attributes of a Model class body into its _meta
    dictionary, and turn them into slots
    """
    def __new__(cls, name, bases, dct):
        _meta: Dict[str, Field] = {}
        for base in bases:
            _meta.update(getattr(base, "_meta", {}))

        slots = []
        for field_name, val in list(dct.items()):
            if isinstance(val, type) and issubclass(val, ModelBase):
                # A bare Model class declares a nested record
                val = ModelField(val)
            elif not isinstance(val, Field):
                continue
            # Field instances can be shared between models: name a copy
            val = copy.copy(val)
            val.set_name(field_name)
            _meta[field_name] = val
            del dct[field_name]
            slots.append(field_name)

        dct["__slots__"] = slots
        res = super().__new__(cls, name, bases, dct)
        res._meta = _meta
        return res


class Model(ModelBase, metaclass=ModelMetaclass):
    """
    Declarative description of a qbnn record (configuration, dataset,
    result row) that can be validated and serialized to JSON.

    Values are cleaned on assignment, so a record always holds values of the
    right type, although they may not validate yet.
    """
    __slots__ = ()

    def __init__(self, *args, **kw):
        for name, value in zip(self._meta, args):
            kw[name] = value

        for name, field in self._meta.items():
            value = kw.pop(name, None)
            setattr(self, name, field.get_construct_default() if value is None else value)

        if kw:
            raise TypeError("{}: unknown field(s) {}".format(self.__class__.__name__, ", ".join(sorted(kw))))

    def update(self, *args, **kw):
        """
        Set the given fields, leaving the others untouched
        """
        for name, value in zip(self._meta, args):
            kw[name] = value
        unknown = [name for name in kw if name not in self._meta]
        if unknown:
            raise TypeError("{}: unknown field(s) {}".format(self.__class__.__name__, ", ".join(sorted(unknown))))
        for name, value in kw.items():
            setattr(self, name, value)

    def replace(self: M, **kw) -> M:
        """
        Return a copy of this record with the given fields changed
        """
        res = self.clean_value(self)
        res.update(**kw)
        return res

    def has_value(self) -> bool:
        return any(field.has_value(getattr(self, name)) for name, field in self._meta.items())

    @classmethod
    def clean_value(cls, value: Any) -> Optional["Model"]:
        """
        Build a record from a dict or from another record.

        Records are always copied, so that changing the result does not
        change the value passed in.
        """
        if value is None:
            return None
        if isinstance(value, dict):
            return cls(**value)
        if isinstance(value, ModelBase):
            return cls(**{name: getattr(value, name, None) for name in cls._meta})
        raise TypeError(f"{cls.__name__}: {value!r} is {type(value).__name__} instead of a Model or dict instance")

    def validate_fields(self, validation: Validation):
        for name, field in self._meta.items():
            field.validate(validation, getattr(self, name))

    def validate_model(self, validation: Validation):
        """
        Check invariants that involve more than one field
        """
        pass

    def validate(self, validation: Validation):
        self.validate_fields(validation)
        self.validate_model(validation)

    def check(self, what: Optional[str] = None) -> Validation:
        """
        Validate the record, raising InvalidModelError if it has errors
        """
        validation = Validation()
        self.validate(validation)
        validation.raise_errors(what or self.__class__.__name__)
        return validation

    def to_jsonable(self) -> Dict[str, Any]:
        """
        Return the record as a dict, leaving out unset fields
        """
        res = {}
        for name, field in self._meta.items():
            value = field.to_jsonable(getattr(self, name))
            if value is not None:
                res[name] = value
        return res

    def __setattr__(self, key: str, value: Any):
        field = self._meta.get(key)
        if field is not None:
            value = field.clean_value(value)
        super().__setattr__(key, value)

    def _to_tuple(self) -> Tuple[Any, ...]:
        return tuple(getattr(self, name) for name in self._meta)

    def __eq__(self, other):
        # Empty records compare equal to None
        if other is None:
            return not self.has_value()
        if not isinstance(other, (ModelBase, dict)):
            return NotImplemented
        other = self.clean_value(other)
        if not self.has_value() or not other.has_value():
            return self.has_value() == other.has_value()
        return self._to_tuple() == other._to_tuple()

    __hash__ = None

    def __str__(self):
        vals = ("{}={}".format(name, field.to_str(getattr(self, name))) for name, field in self._meta.items())
        return "{}({})".format(self.__class__.__name__, ", ".join(vals))

    __repr__ = __str__
