"""Matrix Market export and import of assembled systems (via ``scipy.io``)."""
from __future__ import annotations

from pathlib import Path

import numpy as np
import scipy.io
import scipy.sparse as sp


def write_matrix(path, A, comment: str = "") -> Path:
    path = Path(path)
    scipy.io.mmwrite(str(path), sp.coo_matrix(A), comment=comment, precision=17)
    return path.with_suffix(".mtx") if path.suffix != ".mtx" else path


def read_matrix(path) -> sp.csr_matrix:
    return sp.csr_matrix(scipy.io.mmread(str(path)))


def write_vector(path, v, comment: str = "") -> Path:
    path = Path(path)
    scipy.io.mmwrite(str(path), np.asarray(v, dtype=float).reshape(-1, 1), comment=comment, precision=17)
    return path.with_suffix(".mtx") if path.suffix != ".mtx" else path


def read_vector(path) -> np.ndarray:
    v = scipy.io.mmread(str(path))
    return np.asarray(v.todense() if sp.issparse(v) else v, dtype=float).ravel()


def write_system(directory, A, b, stem: str = "system") -> tuple[Path, Path]:
    """``<stem>_A.mtx`` and ``<stem>_b.mtx`` in ``directory``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    return write_matrix(d / f"{stem}_A.mtx", A), write_vector(d / f"{stem}_b.mtx", b)
