"""Matrix Market reader/writer for real symmetric matrices.

Only the subset needed for system files is supported: ``coordinate real
symmetric`` (lower triangle), ``coordinate real general`` and ``array real
{general,symmetric}``.  Values are written with 17 significant digits so a
write/read round trip is exact.
"""

from pathlib import Path

import numpy as np

from .matkit import AsymmetricInput


class ParseError(ValueError):
    def __init__(self, message, lineno=None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


def write_matrix_market(a, path, comment=None):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("expected a square matrix")
    if not np.array_equal(a, a.T):
        raise AsymmetricInput("refusing to write an asymmetric matrix as symmetric")
    n = a.shape[0]
    rows, cols = np.tril_indices(n)
    keep = a[rows, cols] != 0.0
    rows, cols = rows[keep], cols[keep]
    # column-major order of the lower triangle
    order = np.lexsort((rows, cols))
    lines = ["%%MatrixMarket matrix coordinate real symmetric"]
    if comment:
        lines.extend("% " + c for c in str(comment).splitlines())
    lines.append(f"{n} {n} {len(order)}")
    for k in order:
        lines.append(f"{rows[k] + 1} {cols[k] + 1} {a[rows[k], cols[k]]:.17g}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_matrix_market(path) -> np.ndarray:
    text = Path(path).read_text().splitlines()
    if not text:
        raise ParseError("empty file", 1)
    header = text[0].split()
    if len(header) != 5 or header[0].lower() != "%%matrixmarket" or header[1].lower() != "matrix":
        raise ParseError("missing %%MatrixMarket matrix header", 1)
    fmt, field, sym = (h.lower() for h in header[2:])
    if fmt not in ("coordinate", "array"):
        raise ParseError(f"unsupported format {fmt!r}", 1)
    if field not in ("real", "double", "integer"):
        raise ParseError(f"unsupported field {field!r}", 1)
    if sym not in ("symmetric", "general"):
        raise ParseError(f"unsupported symmetry {sym!r}", 1)

    body = [
        (i + 1, line.strip())
        for i, line in enumerate(text)
        if i > 0 and line.strip() and not line.lstrip().startswith("%")
    ]
    if not body:
        raise ParseError("missing size line", len(text))
    size_lineno, size_line = body[0]
    try:
        dims = [int(x) for x in size_line.split()]
    except ValueError:
        raise ParseError("malformed size line", size_lineno) from None
    entries = body[1:]

    if fmt == "coordinate":
        if len(dims) != 3:
            raise ParseError("coordinate size line needs 'rows cols nnz'", size_lineno)
        nrows, ncols, nnz = dims
        if nrows != ncols:
            raise ParseError("matrix is not square", size_lineno)
        if len(entries) != nnz:
            raise ParseError(f"expected {nnz} entries, found {len(entries)}", size_lineno)
        a = np.zeros((nrows, ncols))
        seen = set()
        for lineno, line in entries:
            parts = line.split()
            if len(parts) != 3:
                raise ParseError("expected 'row col value'", lineno)
            try:
                i, j, val = int(parts[0]), int(parts[1]), float(parts[2])
            except ValueError:
                raise ParseError("malformed entry", lineno) from None
            if not (1 <= i <= nrows and 1 <= j <= ncols):
                raise ParseError(f"index ({i}, {j}) out of range", lineno)
            if sym == "symmetric" and i < j:
                raise ParseError("entry above the diagonal in symmetric format", lineno)
            if (i, j) in seen:
                raise ParseError(f"duplicate entry ({i}, {j})", lineno)
            seen.add((i, j))
            a[i - 1, j - 1] = val
            if sym == "symmetric":
                a[j - 1, i - 1] = val
    else:
        if len(dims) != 2:
            raise ParseError("array size line needs 'rows cols'", size_lineno)
        nrows, ncols = dims
        if nrows != ncols:
            raise ParseError("matrix is not square", size_lineno)
        if sym == "symmetric":
            idx = [(i, j) for j in range(ncols) for i in range(j, nrows)]
        else:
            idx = [(i, j) for j in range(ncols) for i in range(nrows)]
        if len(entries) != len(idx):
            raise ParseError(f"expected {len(idx)} values, found {len(entries)}", size_lineno)
        a = np.zeros((nrows, ncols))
        for (lineno, line), (i, j) in zip(entries, idx):
            try:
                val = float(line)
            except ValueError:
                raise ParseError("malformed value", lineno) from None
            a[i, j] = val
            if sym == "symmetric":
                a[j, i] = val

    if sym == "general" and not np.array_equal(a, a.T):
        raise AsymmetricInput(f"{path}: general-format matrix is not symmetric")
    return a
