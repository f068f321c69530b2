from __future__ import annotations

import csv
import io
import json
import logging
from typing import (Any, Dict, Iterable, List, Optional, Sequence, TextIO,
                    Type, Union)

try:
    import ruamel.yaml
    yaml = None
except ModuleNotFoundError:
    ruamel = None
    try:
        import yaml
    except ModuleNotFoundError:
        yaml = None

from . import consts
from .models import Model
from .qubo import QuboModel

log = logging.getLogger("qbnn.codec")

if ruamel is not None:
    def _load_yaml(fd: TextIO):
        yaml_loader = ruamel.yaml.YAML(typ="safe", pure=True)
        return yaml_loader.load(fd)

    def _write_yaml(data: Dict[str, Any], file: TextIO):
        yaml = ruamel.yaml.YAML(typ="safe")
        yaml.default_flow_style = False
        yaml.allow_unicode = True
        yaml.explicit_start = True
        yaml.dump(data, file)
elif yaml is not None:
    def _load_yaml(fd: TextIO):
        return yaml.safe_load(fd)

    def _write_yaml(data: Dict[str, Any], file: TextIO):
        yaml.safe_dump(
            data, stream=file, default_flow_style=False, sort_keys=False,
            allow_unicode=True, explicit_start=True)
else:
    def _load_yaml(fd: TextIO):
        raise NotImplementedError("loading YAML requires ruamel.yaml or PyYAML to be installed")

    def _write_yaml(data: Dict[str, Any], file: TextIO):
        raise NotImplementedError("writing YAML requires ruamel.yaml or PyYAML to be installed")


class ParseError(ValueError):
    """
    Syntax error in an input file
    """
    def __init__(self, pathname: str, lineno: int, column: int, msg: str):
        self.pathname = pathname
        self.lineno = lineno
        self.column = column
        self.msg = msg
        super().__init__(f"{pathname}:{lineno}:{column}: {msg}")


class DimensionError(ParseError):
    """
    An input file has the wrong number of rows, columns or variables
    """
    pass


class Codec:
    """
    Base class for format-specific reading and writing of qbnn data
    """
    EXTENSIONS: Sequence[str] = ()

    def load(self, pathname: str, model: Optional[Type[Model]] = None) -> Any:
        """
        Load data from a file.

        model is the Model type to build from the file, for formats that can
        store more than one kind of record
        """
        with open(pathname, "rt") as fd:
            return self.load_file(fd, pathname, model=model)

    def load_file(self, fd: TextIO, pathname: str, model: Optional[Type[Model]] = None) -> Any:
        raise NotImplementedError(f"{self.__class__.__name__}.load_file is not implemented")

    def loads(self, buf: str, pathname: str = "<string>", model: Optional[Type[Model]] = None) -> Any:
        with io.StringIO(buf) as fd:
            return self.load_file(fd, pathname, model=model)

    def write_file(self, data: Any, file: TextIO):
        """
        Write data to the given file descriptor.
        """
        raise NotImplementedError(f"{self.__class__.__name__}.write_file is not implemented")

    def save(self, data: Any, pathname: str):
        """
        Write data to the given file
        """
        with open(pathname, "wt") as fd:
            self.write_file(data, fd)


class JSON(Codec):
    """
    JSON codec.

    `indent` represents the JSON structure indentation, and can be None to
    output everything in a single line.

    `end` is a string that gets appended to the JSON structure.
    """
    EXTENSIONS = ("json",)

    def __init__(self, indent: Optional[int] = 1, end="\n"):
        self.indent = indent
        self.end = end

    def load_file(self, fd: TextIO, pathname: str, model: Optional[Type[Model]] = None) -> Any:
        try:
            data = json.load(fd)
        except json.JSONDecodeError as e:
            raise ParseError(pathname, e.lineno, e.colno, e.msg) from e
        if model is None:
            return data
        if not isinstance(data, dict):
            raise ParseError(pathname, 1, 1, f"expected a JSON object, found {type(data).__name__}")
        return model(**data)

    def write_file(self, data: Union[Model, Any], file: TextIO):
        if isinstance(data, Model):
            data = data.to_jsonable()
        json.dump(data, file, indent=self.indent, sort_keys=False)
        if self.end is not None:
            file.write(self.end)


class YAML(Codec):
    """
    YAML codec
    """
    EXTENSIONS = ("yaml", "yml")

    def load_file(self, fd: TextIO, pathname: str, model: Optional[Type[Model]] = None) -> Any:
        data = _load_yaml(fd)
        if model is None:
            return data
        return model(**data)

    def write_file(self, data: Union[Model, Any], file: TextIO):
        if isinstance(data, Model):
            data = data.to_jsonable()
        _write_yaml(data, file)


class GlyphText(Codec):
    """
    Plain text dataset format.

    Images are grouped in ``section train`` and ``section test`` blocks.
    Each image is a ``label <O|N|L|X>`` line followed by one line per pixel
    row, using ``.`` for -1 and ``#`` for +1. Blank lines are ignored.
    """
    EXTENSIONS = ("txt", "glyphs")

    SECTIONS = ("train", "test")
    PIXELS = {".": -1, "#": 1}

    def __init__(self, side: int = consts.IMAGE_SIDE):
        self.side = side

    def load_file(self, fd: TextIO, pathname: str, model: Optional[Type[Model]] = None) -> Any:
        from .dataset import Dataset, Image

        sections: Dict[str, List[Image]] = {name: [] for name in self.SECTIONS}
        section: Optional[str] = None
        label: Optional[str] = None
        label_lineno = 0
        rows: List[List[int]] = []

        def flush(lineno: int):
            nonlocal label, rows
            if label is None:
                return
            if len(rows) != self.side:
                raise DimensionError(
                        pathname, lineno, 1,
                        f"image started at line {label_lineno} has {len(rows)} rows instead of {self.side}")
            sections[section].append(Image(label=label, pixels=[p for row in rows for p in row]))
            label = None
            rows = []

        lineno = 0
        for lineno, line in enumerate(fd, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            tokens = line.split()
            if tokens[0] == "section":
                flush(lineno)
                if len(tokens) != 2 or tokens[1] not in self.SECTIONS:
                    raise ParseError(pathname, lineno, 1, f"expected 'section train' or 'section test', found {line!r}")
                section = tokens[1]
            elif tokens[0] == "label":
                flush(lineno)
                if section is None:
                    raise ParseError(pathname, lineno, 1, "image found before any 'section' line")
                if len(tokens) != 2:
                    raise ParseError(pathname, lineno, 1, f"expected 'label <{'|'.join(consts.LABELS)}>'")
                if tokens[1] not in consts.LABELS:
                    raise ParseError(
                            pathname, lineno, line.index(tokens[1]) + 1, f"unknown label {tokens[1]!r}")
                label = tokens[1]
                label_lineno = lineno
            else:
                if label is None:
                    raise ParseError(pathname, lineno, 1, f"pixel row found outside of an image: {line!r}")
                row = line.strip()
                indent = line.index(row[0])
                for col, char in enumerate(row):
                    if char not in self.PIXELS:
                        raise ParseError(pathname, lineno, indent + col + 1, f"invalid pixel {char!r}")
                if len(row) != self.side:
                    raise DimensionError(
                            pathname, lineno, indent + 1, f"row has {len(row)} pixels instead of {self.side}")
                if len(rows) == self.side:
                    raise DimensionError(
                            pathname, lineno, indent + 1,
                            f"image started at line {label_lineno} has more than {self.side} rows")
                rows.append([self.PIXELS[c] for c in row])
        flush(lineno + 1)

        return Dataset(train=sections["train"], test=sections["test"])

    def write_image(self, image, file: TextIO):
        print("label", image.label, file=file)
        for row in range(self.side):
            pixels = image.pixels[row * self.side:(row + 1) * self.side]
            print("".join("#" if p > 0 else "." for p in pixels), file=file)

    def write_file(self, data, file: TextIO):
        for name in self.SECTIONS:
            print("section", name, file=file)
            for image in getattr(data, name):
                print(file=file)
                self.write_image(image, file)
            print(file=file)


class QuboText(Codec):
    """
    Sparse text format for QUBO models.

    The first non-comment line is the number of variables. Following lines
    are ``const c``, ``i c`` for linear terms and ``i j c`` for quadratic
    terms with i < j. Lines starting with ``#`` are comments.
    """
    EXTENSIONS = ("qubo",)

    def load_file(self, fd: TextIO, pathname: str, model: Optional[Type[Model]] = None) -> QuboModel:
        size: Optional[int] = None
        constant = 0.0
        linear: Dict[int, float] = {}
        quadratic: Dict[tuple, float] = {}

        def parse_index(token: str, lineno: int, column: int) -> int:
            try:
                idx = int(token)
            except ValueError:
                raise ParseError(pathname, lineno, column, f"{token!r} is not a variable index") from None
            if not 0 <= idx < size:
                raise DimensionError(pathname, lineno, column, f"variable {idx} is outside 0…{size - 1}")
            return idx

        def parse_coeff(token: str, lineno: int, column: int) -> float:
            try:
                return float(token)
            except ValueError:
                raise ParseError(pathname, lineno, column, f"{token!r} is not a number") from None

        for lineno, line in enumerate(fd, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            tokens = stripped.split()
            # Column of each token, 1-based
            columns = []
            pos = 0
            for tok in tokens:
                pos = line.index(tok, pos)
                columns.append(pos + 1)
                pos += len(tok)

            if size is None:
                if len(tokens) != 1:
                    raise ParseError(pathname, lineno, 1, "the first line must contain only the number of variables")
                try:
                    size = int(tokens[0])
                except ValueError:
                    raise ParseError(pathname, lineno, 1, f"{tokens[0]!r} is not a variable count") from None
                if size < 0:
                    raise DimensionError(pathname, lineno, 1, "the number of variables cannot be negative")
                continue

            if tokens[0] == "const":
                if len(tokens) != 2:
                    raise ParseError(pathname, lineno, 1, "expected 'const <value>'")
                constant += parse_coeff(tokens[1], lineno, columns[1])
            elif len(tokens) == 2:
                i = parse_index(tokens[0], lineno, columns[0])
                linear[i] = linear.get(i, 0.0) + parse_coeff(tokens[1], lineno, columns[1])
            elif len(tokens) == 3:
                i = parse_index(tokens[0], lineno, columns[0])
                j = parse_index(tokens[1], lineno, columns[1])
                if i == j:
                    raise ParseError(pathname, lineno, columns[1], f"quadratic term on the diagonal ({i}, {j})")
                key = (min(i, j), max(i, j))
                quadratic[key] = quadratic.get(key, 0.0) + parse_coeff(tokens[2], lineno, columns[2])
            else:
                raise ParseError(pathname, lineno, 1, f"expected 1 to 3 values, found {len(tokens)}")

        if size is None:
            raise ParseError(pathname, 1, 1, "missing number of variables")

        lin = [0.0] * size
        for i, c in linear.items():
            lin[i] = c
        return QuboModel(size, constant, lin, quadratic)

    def write_file(self, data: QuboModel, file: TextIO, comments: Iterable[str] = ()):
        for comment in comments:
            print("#", comment, file=file)
        print(data.size, file=file)
        print("const", repr(data.constant), file=file)
        for i, coeff in enumerate(data.linear):
            if coeff != 0:
                print(i, repr(float(coeff)), file=file)
        for (i, j), coeff in data.quadratic.items():
            print(i, j, repr(float(coeff)), file=file)

    def save(self, data: QuboModel, pathname: str, comments: Iterable[str] = ()):
        with open(pathname, "wt") as fd:
            self.write_file(data, fd, comments=comments)


class CSV(Codec):
    """
    Write lists of records as CSV, one column per Model field
    """
    EXTENSIONS = ("csv",)

    def __init__(self, columns: Optional[Sequence[str]] = None):
        self.columns = columns

    def load_file(self, fd: TextIO, pathname: str, model: Optional[Type[Model]] = None) -> List[Any]:
        reader = csv.DictReader(fd)
        if model is None:
            return list(reader)
        res = []
        for row in reader:
            try:
                res.append(model(**{k: (v if v != "" else None) for k, v in row.items()}))
            except (TypeError, ValueError) as e:
                raise ParseError(pathname, reader.line_num, 1, str(e)) from e
        return res

    def write_file(self, data: Sequence[Model], file: TextIO):
        columns = self.columns
        if columns is None:
            if not data:
                return
            columns = list(data[0]._meta.keys())
        writer = csv.writer(file, lineterminator="\n")
        writer.writerow(columns)
        for row in data:
            writer.writerow([row._meta[name].to_str(getattr(row, name)) for name in columns])

    def save(self, data: Sequence[Model], pathname: str):
        with open(pathname, "wt", newline="") as fd:
            self.write_file(data, fd)


class Codecs:
    """
    A collection of codecs
    """
    ALL_CODECS = (JSON, YAML, GlyphText, QuboText, CSV)

    def __init__(
            self,
            include: Optional[Sequence[Type[Codec]]] = None,
            exclude: Optional[Sequence[Type[Codec]]] = None):
        """
        if `include` is not None, only codecs in that list are used.

        If `exclude` is not None, all codecs are used except the given one.

        If neither `include` nor `exclude` are set, all codecs are used.
        """
        self.codecs: List[Type[Codec]]

        if include is not None and exclude is not None:
            raise ValueError("include and exclude cannot both be set")
        elif include is not None:
            self.codecs = list(include)
        elif exclude is not None:
            self.codecs = [c for c in self.ALL_CODECS if c not in exclude]
        else:
            self.codecs = list(self.ALL_CODECS)

    def codec_from_filename(self, pathname: str) -> Type[Codec]:
        """
        Infer a Codec class from the extension of the file at `pathname`.
        """
        if "." not in pathname:
            raise ValueError(f"{pathname}: file name has no extension")
        ext = pathname.rsplit(".", 1)[1].lower()

        for c in self.codecs:
            if ext in c.EXTENSIONS:
                return c

        raise ValueError(f"{pathname}: unsupported extension {ext!r}")
