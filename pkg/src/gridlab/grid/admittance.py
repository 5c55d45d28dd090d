import numpy as np
from scipy import sparse


def branch_admittances(case):
    """Series admittance and half line-charging susceptance per line, in p.u."""
    r = case.line_array("r")
    x = case.line_array("x")
    b = case.line_array("b")
    return 1.0 / (r + 1j * x), 0.5j * b


def build_admittance(case, line_status=None):
    """Bus admittance matrix as a CSR sparse matrix.

    Out-of-service lines contribute nothing, including their charging shunts.
    """
    n = case.n_bus
    if line_status is None:
        line_status = np.ones(case.n_line, dtype=bool)
    line_status = np.asarray(line_status, dtype=bool)
    if line_status.shape != (case.n_line,):
        raise ValueError(f"line_status must have length {case.n_line}")
    ys, ysh = branch_admittances(case)
    on = line_status
    f = case.line_from[on]
    t = case.line_to[on]
    ys = ys[on]
    ysh = ysh[on]
    rows = np.concatenate([f, t, f, t])
    cols = np.concatenate([f, t, t, f])
    vals = np.concatenate([ys + ysh, ys + ysh, -ys, -ys])
    return sparse.csr_matrix((vals, (rows, cols)), shape=(n, n), dtype=complex)
