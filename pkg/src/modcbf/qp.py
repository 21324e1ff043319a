"""Dense convex QP solver (primal active set).

Solves::

    min  1/2 z^T Q z + c^T z
    s.t. A_in z >= b_in,  A_eq z = b_eq,  lower <= z <= upper

Box bounds are appended to the inequality rows. A feasible start comes from
a phase-1 LP (minimise a uniform slack ``t``) run through the same active
set routine; ``t* > 0`` certifies infeasibility.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionMismatch

log = logging.getLogger(__name__)

COND_LIMIT = 1e12
TIKHONOV = 1e-10


class Status(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"


@dataclass(eq=False)
class QProblem:
    Q: np.ndarray
    c: np.ndarray
    A_in: Optional[np.ndarray] = None
    b_in: Optional[np.ndarray] = None
    A_eq: Optional[np.ndarray] = None
    b_eq: Optional[np.ndarray] = None
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None

    def __post_init__(self):
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        n = self.Q.shape[0]
        if self.Q.shape != (n, n):
            raise DimensionMismatch("Q must be square")
        if not np.allclose(self.Q, self.Q.T, rtol=0, atol=1e-12):
            raise ValueError("Q must be symmetric")
        self.c = np.asarray(self.c, dtype=float).reshape(n)
        self.A_in, self.b_in = _rows(self.A_in, self.b_in, n, "inequality")
        self.A_eq, self.b_eq = _rows(self.A_eq, self.b_eq, n, "equality")
        for name in ("lower", "upper"):
            val = getattr(self, name)
            if val is not None:
                setattr(self, name, np.broadcast_to(np.asarray(val, dtype=float), (n,)).copy())

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    def stacked_inequalities(self) -> tuple[np.ndarray, np.ndarray]:
        """All inequality rows ``G z >= h``: general rows first, then bounds."""
        G, h = [self.A_in], [self.b_in]
        eye = np.eye(self.n)
        if self.lower is not None:
            keep = np.isfinite(self.lower)
            G.append(eye[keep])
            h.append(self.lower[keep])
        if self.upper is not None:
            keep = np.isfinite(self.upper)
            G.append(-eye[keep])
            h.append(-self.upper[keep])
        return np.vstack(G), np.concatenate(h)


def _rows(A, b, n, kind):
    if A is None:
        return np.zeros((0, n)), np.zeros(0)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    if A.shape[1] != n or A.shape[0] != b.shape[0]:
        raise DimensionMismatch(f"{kind} rows have inconsistent shapes {A.shape}, {b.shape}")
    return A, b


@dataclass(eq=False)
class QSolution:
    z: np.ndarray
    status: Status
    active_set: tuple = ()
    multipliers: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ill_conditioned: bool = False
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL


def kkt_residuals(qp: QProblem, sol: QSolution) -> dict:
    """Stationarity, primal feasibility, dual sign and complementarity residuals."""
    G, h = qp.stacked_inequalities()
    m = G.shape[0]
    mu, nu = sol.multipliers[:m], sol.multipliers[m:]
    z = sol.z
    slack = G @ z - h
    eq = qp.A_eq @ z - qp.b_eq
    stat = qp.Q @ z + qp.c - G.T @ mu - qp.A_eq.T @ nu
    return {
        "stationarity": float(np.linalg.norm(stat)),
        "primal": float(max(np.max(-slack, initial=0.0), np.max(np.abs(eq), initial=0.0))),
        "dual": float(max(-np.min(mu, initial=0.0), 0.0)),
        "complementarity": float(np.max(np.abs(mu * slack), initial=0.0)),
    }


def _null_space(C: np.ndarray, n: int, tol: float = 1e-12) -> np.ndarray:
    if C.shape[0] == 0:
        return np.eye(n)
    _, s, vt = np.linalg.svd(C)
    rank = int(np.sum(s > tol * max(1.0, s[0])))
    return vt[rank:].T


class _Outcome:
    __slots__ = ("z", "working", "mu", "nu", "ok", "iterations", "ill")

    def __init__(self, z, working, mu, nu, ok, iterations, ill):
        self.z, self.working, self.mu, self.nu = z, working, mu, nu
        self.ok, self.iterations, self.ill = ok, iterations, ill


def _active_set(Q, c, G, h, A, b, z, working, max_iter, tol) -> _Outcome:
    """Primal active-set iterations from a feasible ``z``.

    ``Q`` may be singular (phase-1 LP); zero-curvature descent directions are
    followed to the nearest blocking constraint.
    """
    n = Q.shape[0]
    working = list(working)
    ill = False
    m = G.shape[0]
    for it in range(1, max_iter + 1):
        C = np.vstack([A, G[working]]) if working else A
        Z = _null_space(C, n)
        grad = Q @ z + c
        p = np.zeros(n)
        ray = False
        if Z.shape[1]:
            rh = Z.T @ Q @ Z
            rg = Z.T @ grad
            evals, evecs = np.linalg.eigh(rh)
            scale = max(1.0, float(np.max(np.abs(evals))))
            flat = evals <= 1e-12 * scale
            if np.any(flat):
                pz = -evecs[:, flat] @ (evecs[:, flat].T @ rg)
                if np.linalg.norm(pz) > tol:
                    p, ray = Z @ pz, True
            if not ray:
                if evals[0] > 0 and evals[-1] / evals[0] > COND_LIMIT:
                    ill = True
                    evals = evals + TIKHONOV
                inv = np.where(flat, 0.0, 1.0 / np.where(flat, 1.0, evals))
                p = -Z @ (evecs @ (inv * (evecs.T @ rg)))

        if np.linalg.norm(p) <= tol * max(1.0, np.linalg.norm(z)):
            # stationary on the working set: check multiplier signs
            lam = np.linalg.lstsq(C.T, grad, rcond=None)[0] if C.shape[0] else np.zeros(0)
            nu, mu_w = lam[: A.shape[0]], lam[A.shape[0]:]
            if mu_w.size == 0 or mu_w.min() >= -tol:
                mu = np.zeros(m)
                mu[working] = np.maximum(mu_w, 0.0)
                return _Outcome(z, working, mu, nu, True, it, ill)
            drop = int(np.argmin(mu_w))
            working.pop(drop)
            continue

        gp = G @ p
        step, block = (np.inf if ray else 1.0), -1
        in_working = np.zeros(m, dtype=bool)
        in_working[working] = True
        for i in np.flatnonzero((gp < -tol) & ~in_working):
            alpha = max(0.0, (h[i] - G[i] @ z) / gp[i])
            if alpha < step - 1e-15:
                step, block = alpha, i
        if not np.isfinite(step):
            return _Outcome(z, working, None, None, False, it, ill)
        z = z + step * p
        if block >= 0:
            working.append(int(block))
    return _Outcome(z, working, None, None, False, max_iter, ill)


class ActiveSetSolver:
    """Reusable solver that warm-starts from the previous active set.

    One instance per control loop; instances are not shared across threads.
    """

    def __init__(self, max_iter: int = 200, tol: float = 1e-10, feas_tol: float = 1e-9):
        self.max_iter = max_iter
        self.tol = tol
        self.feas_tol = feas_tol
        self.warm: tuple = ()

    def reset(self):
        self.warm = ()

    def solve(self, qp: QProblem) -> QSolution:
        G, h = qp.stacked_inequalities()
        sol = self._try_guess(qp, G, h, self.warm)
        if sol is None and self.warm:
            sol = self._try_guess(qp, G, h, ())
        if sol is None:
            sol = self._solve_cold(qp, G, h)
        if sol.optimal:
            self.warm = sol.active_set
        return sol

    def _try_guess(self, qp, G, h, guess: Sequence[int]) -> Optional[QSolution]:
        """Solve the equality QP on a guessed working set and accept it if KKT holds."""
        guess = [i for i in guess if i < G.shape[0]]
        C = np.vstack([qp.A_eq, G[guess]])
        d = np.concatenate([qp.b_eq, h[guess]])
        k = C.shape[0]
        n = qp.n
        if k > n or (k and np.linalg.matrix_rank(C) < k):
            return None
        kkt = np.zeros((n + k, n + k))
        kkt[:n, :n] = qp.Q
        kkt[:n, n:] = -C.T
        kkt[n:, :n] = C
        try:
            sol = np.linalg.solve(kkt, np.concatenate([-qp.c, d]))
        except np.linalg.LinAlgError:
            return None
        z, lam = sol[:n], sol[n:]
        if not np.all(np.isfinite(sol)):
            return None
        tol = self.feas_tol * max(1.0, float(np.max(np.abs(h), initial=0.0)))
        if np.any(G @ z < h - tol):
            return None
        mu_w = lam[qp.A_eq.shape[0]:]
        if mu_w.size and mu_w.min() < -self.tol:
            return None
        # reject numerically singular guesses
        rhs = np.concatenate([-qp.c, d])
        if np.linalg.norm(kkt @ sol - rhs) > 1e-9 * max(1.0, np.linalg.norm(rhs)):
            return None
        mu = np.zeros(G.shape[0])
        mu[guess] = np.maximum(mu_w, 0.0)
        return QSolution(z, Status.OPTIMAL, tuple(sorted(guess)), np.concatenate([mu, lam[: qp.A_eq.shape[0]]]))

    def _solve_cold(self, qp: QProblem, G, h) -> QSolution:
        n = qp.n
        m = G.shape[0]
        A, b = qp.A_eq, qp.b_eq
        if A.shape[0]:
            z0 = np.linalg.lstsq(A, b, rcond=None)[0]
            if np.linalg.norm(A @ z0 - b) > self.feas_tol * max(1.0, np.linalg.norm(b)):
                return self._infeasible(n, m + A.shape[0])
        else:
            z0 = np.zeros(n)
        viol = h - G @ z0
        t0 = max(0.0, float(np.max(viol, initial=0.0)))
        iters = 0
        if t0 > 0:
            # phase 1: min t  s.t.  G z + t >= h,  t >= 0,  A z = b
            G1 = np.vstack([np.hstack([G, np.ones((m, 1))]), np.eye(1, n + 1, n)])
            h1 = np.concatenate([h, [0.0]])
            A1 = np.hstack([A, np.zeros((A.shape[0], 1))])
            c1 = np.zeros(n + 1)
            c1[-1] = 1.0
            y0 = np.append(z0, t0)
            start = [int(np.argmax(viol))]
            out = _active_set(np.zeros((n + 1, n + 1)), c1, G1, h1, A1, b, y0, start, 4 * self.max_iter, self.tol)
            iters += out.iterations
            scale = max(1.0, float(np.max(np.abs(h), initial=0.0)))
            if not out.ok or out.z[-1] > self.feas_tol * scale:
                return self._infeasible(n, m + A.shape[0], iters)
            z0 = out.z[:n]
        working = self._independent_active(G, h, A, z0)
        out = _active_set(qp.Q, qp.c, G, h, A, b, z0, working, self.max_iter, self.tol)
        iters += out.iterations
        if not out.ok:
            log.warning("active set did not converge in %d iterations", iters)
            return self._infeasible(n, m + A.shape[0], iters)
        return QSolution(
            out.z,
            Status.OPTIMAL,
            tuple(sorted(out.working)),
            np.concatenate([out.mu, out.nu]),
            ill_conditioned=out.ill,
            iterations=iters,
        )

    def _independent_active(self, G, h, A, z) -> list:
        working: list = []
        rows = A
        tol = self.feas_tol * max(1.0, float(np.max(np.abs(h), initial=0.0)))
        for i in np.flatnonzero(np.abs(G @ z - h) <= tol):
            trial = np.vstack([rows, G[i]])
            if np.linalg.matrix_rank(trial) == trial.shape[0]:
                working.append(int(i))
                rows = trial
        return working

    @staticmethod
    def _infeasible(n, k, iters=0) -> QSolution:
        return QSolution(np.zeros(n), Status.INFEASIBLE, (), np.zeros(k), iterations=iters)


def solve(qp: QProblem) -> QSolution:
    """Solve ``qp`` with a fresh solver (no warm start)."""
    return ActiveSetSolver().solve(qp)
