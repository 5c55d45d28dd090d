"""Polar Newton-Raphson AC power flow."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .admittance import branch_admittances, build_admittance


@dataclass
class PowerFlowSolution:
    v_mag: np.ndarray
    v_ang: np.ndarray
    line_flow_p: np.ndarray  # MW, sending end
    line_flow_q: np.ndarray  # MVAr, sending end
    rho: np.ndarray
    slack_p: float
    slack_q: float
    gen_p: np.ndarray  # MW, balanced unit filled in with slack_p
    gen_q: np.ndarray  # MVAr
    grid_loss: float  # MW
    converged: bool
    iterations: int
    max_mismatch: float  # p.u.


def _mismatch(ybus, v, s_spec, pvpq, pq):
    s_calc = v * np.conj(ybus @ v)
    dS = s_calc - s_spec
    return np.concatenate([dS.real[pvpq], dS.imag[pq]])


def _jacobian(ybus, v, pvpq, pq):
    ibus = ybus @ v
    vnorm = v / np.abs(v)
    diag = np.arange(len(v))
    dS_dVm = v[:, None] * np.conj(ybus * vnorm[None, :])
    dS_dVm[diag, diag] += np.conj(ibus) * vnorm
    dS_dVa = -1j * v[:, None] * np.conj(ybus * v[None, :])
    dS_dVa[diag, diag] += 1j * v * np.conj(ibus)
    na, nm = len(pvpq), len(pq)
    J = np.empty((na + nm, na + nm))
    J[:na, :na] = dS_dVa[pvpq].real[:, pvpq]
    J[:na, na:] = dS_dVm[pvpq].real[:, pq]
    J[na:, :na] = dS_dVa[pq].imag[:, pvpq]
    J[na:, na:] = dS_dVm[pq].imag[:, pq]
    return J


def _static(case):
    """Per-case constant arrays used on every solve, memoized on the case."""
    st = case.__dict__.get("_pf_static")
    if st is None:
        ys, ysh = branch_admittances(case)
        bal, slack = case.balanced_id, case.slack_bus
        st = {
            "ys": ys, "ysh": ysh, "i_max": case.line_array("i_max"),
            "q_span": case.gen_array("q_max") - case.gen_array("q_min"),
            "slack_others": [g for g in range(case.n_gen) if g != bal and case.gen_bus[g] == slack],
            "bus_members": [(b, [g for g in range(case.n_gen) if case.gen_bus[g] == b])
                            for b in np.unique(case.gen_bus)],
        }
        case.__dict__["_pf_static"] = st
    return st


def dense_admittance(case, line_status):
    """Dense copy of the admittance matrix, memoized per line-status pattern."""
    key = np.asarray(line_status, dtype=bool).tobytes()
    memo = case.__dict__.setdefault("_ybus_memo", {})
    y = memo.get(key)
    if y is None:
        if len(memo) > 256:
            memo.clear()
        y = build_admittance(case, line_status).toarray()
        y.setflags(write=False)
        memo[key] = y
    return y


def bus_injection_mismatch(case, sol, gen_p, load_p, load_q, line_status=None, gen_on=None):
    """Max-norm of the P/Q mismatch recomputed from a solution's voltages (p.u.)."""
    if line_status is None:
        line_status = np.ones(case.n_line, dtype=bool)
    if gen_on is None:
        gen_on = np.ones(case.n_gen, dtype=bool)
    gen_on = np.asarray(gen_on, dtype=bool).copy()
    gen_on[case.balanced_id] = True
    ybus = build_admittance(case, line_status).toarray()
    s_spec, pv, pq = _specified(case, gen_p, load_p, load_q, gen_on)
    pvpq = np.concatenate([pv, pq])
    v = sol.v_mag * np.exp(1j * sol.v_ang)
    return float(np.max(np.abs(_mismatch(ybus, v, s_spec, pvpq, pq)), initial=0.0))


def _specified(case, gen_p, load_p, load_q, gen_on):
    n = case.n_bus
    base = case.s_base
    if gen_on is None:
        gen_on = np.ones(case.n_gen, dtype=bool)
    p_inj = np.zeros(n)
    q_inj = np.zeros(n)
    gp = np.where(gen_on, np.asarray(gen_p, dtype=float), 0.0)
    gp[case.balanced_id] = 0.0
    np.add.at(p_inj, case.gen_bus, gp)
    np.add.at(p_inj, case.load_bus, -np.asarray(load_p, dtype=float))
    np.add.at(q_inj, case.load_bus, -np.asarray(load_q, dtype=float))
    has_gen = np.zeros(n, dtype=bool)
    has_gen[case.gen_bus[gen_on]] = True
    slack = case.slack_bus
    pv = np.array([i for i in range(n) if i != slack and has_gen[i]], dtype=int)
    pq = np.array([i for i in range(n) if i != slack and not has_gen[i]], dtype=int)
    return (p_inj + 1j * q_inj) / base, pv, pq


def solve_power_flow(
    case,
    gen_p,
    gen_v,
    load_p,
    load_q,
    line_status=None,
    tol=1e-8,
    max_iter=20,
    gen_on=None,
    v0=None,
    ybus=None,
):
    """Solve the AC power flow for the given setpoints.

    `gen_p` is in MW with the balanced unit's entry ignored; `gen_v` holds the
    voltage setpoints (p.u.). A bus whose generators are all off is treated as
    PQ. Non-convergence is reported through ``converged=False`` rather than
    raised. `v0` warm-starts from a complex voltage vector; `ybus` may pass a
    precomputed dense admittance matrix for the same line status.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    n = case.n_bus
    if line_status is None:
        line_status = np.ones(case.n_line, dtype=bool)
    line_status = np.asarray(line_status, dtype=bool)
    if gen_on is None:
        gen_on = np.ones(case.n_gen, dtype=bool)
    gen_on = np.asarray(gen_on, dtype=bool)
    gen_on = gen_on.copy()
    gen_on[case.balanced_id] = True
    if ybus is None:
        ybus = dense_admittance(case, line_status)

    s_spec, pv, pq = _specified(case, gen_p, load_p, load_q, gen_on)
    pvpq = np.concatenate([pv, pq])
    slack = case.slack_bus

    vset = np.ones(n)
    gen_v = np.asarray(gen_v, dtype=float)
    # first online generator on a bus fixes its voltage
    for g in range(case.n_gen - 1, -1, -1):
        if gen_on[g]:
            vset[case.gen_bus[g]] = gen_v[g]
    if v0 is None:
        vm = np.ones(n)
        va = np.zeros(n)
    else:
        vm = np.abs(v0).astype(float)
        va = np.angle(v0).astype(float)
    vm[pv] = vset[pv]
    vm[slack] = vset[slack]
    va[slack] = 0.0
    v = vm * np.exp(1j * va)

    npvpq, npq = len(pvpq), len(pq)
    F = _mismatch(ybus, v, s_spec, pvpq, pq)
    norm = float(np.max(np.abs(F), initial=0.0))
    it = 0
    converged = norm <= tol
    while not converged and it < max_iter:
        J = _jacobian(ybus, v, pvpq, pq)
        try:
            dx = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError:
            break
        it += 1
        va[pvpq] += dx[:npvpq]
        vm[pq] += dx[npvpq:npvpq + npq]
        if not np.all(np.isfinite(vm)) or np.any(vm <= 0):
            break
        v = vm * np.exp(1j * va)
        F = _mismatch(ybus, v, s_spec, pvpq, pq)
        norm = float(np.max(np.abs(F), initial=0.0))
        if not np.isfinite(norm):
            break
        converged = norm <= tol
    return _finish(case, v, ybus, line_status, gen_p, gen_on, load_p, load_q, converged, it, norm)


def _finish(case, v, ybus, line_status, gen_p, gen_on, load_p, load_q, converged, it, norm):
    base = case.s_base
    s_inj = v * np.conj(ybus @ v) * base  # MVA, net injection per bus

    # line flows at both ends
    st = _static(case)
    ys, ysh = st["ys"], st["ysh"]
    f, t = case.line_from, case.line_to
    vf, vt = v[f], v[t]
    i_f = (vf - vt) * ys + vf * ysh
    i_t = (vt - vf) * ys + vt * ysh
    on = line_status
    i_f = np.where(on, i_f, 0.0)
    i_t = np.where(on, i_t, 0.0)
    s_f = vf * np.conj(i_f) * base
    s_t = vt * np.conj(i_t) * base
    rho = np.abs(i_f) / st["i_max"]
    loss = float(np.sum(s_f.real + s_t.real))

    # generator outputs: injection plus local load
    n = case.n_bus
    bus_load = np.zeros(n, dtype=complex)
    np.add.at(bus_load, case.load_bus, np.asarray(load_p, float) + 1j * np.asarray(load_q, float))
    bus_gen = s_inj + bus_load

    bal = case.balanced_id
    slack = case.slack_bus
    out_p = np.where(gen_on, np.asarray(gen_p, dtype=float), 0.0).copy()
    out_p[bal] = bus_gen[slack].real - sum(out_p[g] for g in st["slack_others"])

    out_q = np.zeros(case.n_gen)
    q_span = st["q_span"]
    for b, group in st["bus_members"]:
        members = [g for g in group if gen_on[g]]
        if not members:
            continue
        share = q_span[members] / q_span[members].sum()
        out_q[members] = bus_gen[b].imag * share

    return PowerFlowSolution(
        v_mag=np.abs(v),
        v_ang=np.angle(v),
        line_flow_p=s_f.real,
        line_flow_q=s_f.imag,
        rho=rho,
        slack_p=float(out_p[bal]),
        slack_q=float(out_q[bal]),
        gen_p=out_p,
        gen_q=out_q,
        grid_loss=loss,
        converged=bool(converged),
        iterations=it,
        max_mismatch=norm,
    )
