"""Method of Moving Asymptotes (Svanberg), dense-constraint variant for small m.

The subproblem is solved with the usual primal-dual interior-point scheme.
Problem form::

    min  f0(x) + a0 z + sum(c_i y_i + d_i y_i^2 / 2)
    s.t. f_i(x) - a_i z - y_i <= 0,  xmin <= x <= xmax,  y, z >= 0
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np


@dataclass
class MMA:
    n: int
    m: int
    xmin: np.ndarray
    xmax: np.ndarray
    move: float = 0.1
    asyinit: float = 0.5
    asydecr: float = 0.7
    asyincr: float = 1.2
    a0: float = 1.0
    a: Optional[np.ndarray] = None
    c: Optional[np.ndarray] = None
    d: Optional[np.ndarray] = None
    iteration: int = 0
    low: np.ndarray = field(init=False)
    upp: np.ndarray = field(init=False)
    xold1: Optional[np.ndarray] = field(init=False, default=None)
    xold2: Optional[np.ndarray] = field(init=False, default=None)

    def __post_init__(self):
        self.xmin = np.broadcast_to(np.asarray(self.xmin, float), (self.n,)).copy()
        self.xmax = np.broadcast_to(np.asarray(self.xmax, float), (self.n,)).copy()
        self.a = np.zeros(self.m) if self.a is None else np.asarray(self.a, float)
        self.c = np.full(self.m, 1000.0) if self.c is None else np.asarray(self.c, float)
        self.d = np.ones(self.m) if self.d is None else np.asarray(self.d, float)
        self.low = self.xmin.copy()
        self.upp = self.xmax.copy()

    def update(self, x, f0, df0, fval, dfdx) -> np.ndarray:
        """One MMA step from ``x``; returns the new design."""
        x = np.asarray(x, float)
        self.iteration += 1
        span = self.xmax - self.xmin
        if self.iteration <= 2:
            self.low = x - self.asyinit * span
            self.upp = x + self.asyinit * span
        else:
            osc = (x - self.xold1) * (self.xold1 - self.xold2)
            factor = np.ones(self.n)
            factor[osc > 0] = self.asyincr
            factor[osc < 0] = self.asydecr
            low = x - factor * (self.xold1 - self.low)
            upp = x + factor * (self.upp - self.xold1)
            self.low = np.clip(low, x - 10.0 * span, x - 0.01 * span)
            self.upp = np.clip(upp, x + 0.01 * span, x + 10.0 * span)

        alfa = np.maximum.reduce([self.low + 0.1 * (x - self.low), x - self.move * span, self.xmin])
        beta = np.minimum.reduce([self.upp - 0.1 * (self.upp - x), x + self.move * span, self.xmax])

        inv_span = 1.0 / np.maximum(span, 1e-5)
        ux1 = self.upp - x
        xl1 = x - self.low
        ux2, xl2 = ux1 * ux1, xl1 * xl1
        df0 = np.asarray(df0, float)
        dfdx = np.atleast_2d(np.asarray(dfdx, float))
        fval = np.atleast_1d(np.asarray(fval, float))

        p0 = np.maximum(df0, 0.0)
        q0 = np.maximum(-df0, 0.0)
        pq0 = 0.001 * (p0 + q0) + 1e-5 * inv_span
        p0 = (p0 + pq0) * ux2
        q0 = (q0 + pq0) * xl2
        P = np.maximum(dfdx, 0.0)
        Q = np.maximum(-dfdx, 0.0)
        PQ = 0.001 * (P + Q) + 1e-5 * inv_span[None, :]
        P = (P + PQ) * ux2[None, :]
        Q = (Q + PQ) * xl2[None, :]
        b = P @ (1.0 / ux1) + Q @ (1.0 / xl1) - fval

        xnew = subsolve(self.m, self.n, self.low, self.upp, alfa, beta, p0, q0, P, Q,
                        self.a0, self.a, b, self.c, self.d)
        self.xold2 = self.xold1 if self.xold1 is not None else x.copy()
        self.xold1 = x.copy()
        return xnew


def subsolve(m, n, low, upp, alfa, beta, p0, q0, P, Q, a0, a, b, c, d, epsimin=1e-7):
    een = np.ones(n)
    eem = np.ones(m)
    epsi = 1.0
    x = 0.5 * (alfa + beta)
    y = eem.copy()
    z = 1.0
    lam = eem.copy()
    xsi = np.maximum(een / (x - alfa), een)
    eta = np.maximum(een / (beta - x), een)
    mu = np.maximum(eem, 0.5 * c)
    zet = 1.0
    s = eem.copy()

    def residual(x, y, z, lam, xsi, eta, mu, zet, s, epsi):
        ux1 = upp - x
        xl1 = x - low
        plam = p0 + P.T @ lam
        qlam = q0 + Q.T @ lam
        gvec = P @ (1.0 / ux1) + Q @ (1.0 / xl1)
        dpsidx = plam / (ux1 * ux1) - qlam / (xl1 * xl1)
        return np.concatenate([
            dpsidx - xsi + eta,
            c + d * y - mu - lam,
            [a0 - zet - a @ lam],
            gvec - a * z - y + s - b,
            xsi * (x - alfa) - epsi,
            eta * (beta - x) - epsi,
            mu * y - epsi,
            [zet * z - epsi],
            lam * s - epsi,
        ])

    while epsi > epsimin:
        res = residual(x, y, z, lam, xsi, eta, mu, zet, s, epsi)
        resnorm = np.linalg.norm(res)
        resmax = np.max(np.abs(res))
        inner = 0
        while resmax > 0.9 * epsi and inner < 200:
            inner += 1
            ux1 = upp - x
            xl1 = x - low
            ux2, xl2 = ux1 * ux1, xl1 * xl1
            ux3, xl3 = ux1 * ux2, xl1 * xl2
            plam = p0 + P.T @ lam
            qlam = q0 + Q.T @ lam
            gvec = P @ (1.0 / ux1) + Q @ (1.0 / xl1)
            GG = P / ux2[None, :] - Q / xl2[None, :]
            dpsidx = plam / ux2 - qlam / xl2
            delx = dpsidx - epsi / (x - alfa) + epsi / (beta - x)
            dely = c + d * y - lam - epsi / y
            delz = a0 - a @ lam - epsi / z
            dellam = gvec - a * z - y - b + epsi / lam
            diagx = 2.0 * (plam / ux3 + qlam / xl3) + xsi / (x - alfa) + eta / (beta - x)
            diagy = d + mu / y
            diaglamyi = s / lam + 1.0 / diagy

            blam = dellam + dely / diagy - GG @ (delx / diagx)
            Alam = np.diag(diaglamyi) + (GG / diagx[None, :]) @ GG.T
            AA = np.zeros((m + 1, m + 1))
            AA[:m, :m] = Alam
            AA[:m, m] = a
            AA[m, :m] = a
            AA[m, m] = -zet / z
            sol = np.linalg.solve(AA, np.concatenate([blam, [delz]]))
            dlam, dz = sol[:m], sol[m]
            dx = -delx / diagx - (GG.T @ dlam) / diagx
            dy = -dely / diagy + dlam / diagy
            dxsi = -xsi + epsi / (x - alfa) - xsi * dx / (x - alfa)
            deta = -eta + epsi / (beta - x) + eta * dx / (beta - x)
            dmu = -mu + epsi / y - mu * dy / y
            dzet = -zet + epsi / z - zet * dz / z
            ds = -s + epsi / lam - s * dlam / lam

            xx = np.concatenate([y, [z], lam, xsi, eta, mu, [zet], s])
            dxx = np.concatenate([dy, [dz], dlam, dxsi, deta, dmu, [dzet], ds])
            stm = max(np.max(-1.01 * dxx / xx), np.max(-1.01 * dx / (x - alfa)),
                      np.max(1.01 * dx / (beta - x)), 1.0)
            step = 1.0 / stm
            old = (x, y, z, lam, xsi, eta, mu, zet, s)
            newnorm = 2.0 * resnorm
            tries = 0
            while newnorm > resnorm and tries < 50:
                tries += 1
                x = old[0] + step * dx
                y = old[1] + step * dy
                z = old[2] + step * dz
                lam = old[3] + step * dlam
                xsi = old[4] + step * dxsi
                eta = old[5] + step * deta
                mu = old[6] + step * dmu
                zet = old[7] + step * dzet
                s = old[8] + step * ds
                res = residual(x, y, z, lam, xsi, eta, mu, zet, s, epsi)
                newnorm = np.linalg.norm(res)
                step /= 2.0
            resnorm = newnorm
            resmax = np.max(np.abs(res))
        epsi *= 0.1
    return x
