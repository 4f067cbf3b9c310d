"""Weighted mixed Dirichlet/Neumann Poisson solves and the dual (H^-1) norms.

A functional ``f = (f0, fbar)`` acts on test functions as
``xi -> int f0 xi - int fbar . grad xi``; its norm is ``sqrt(int sigma |grad z|^2)``
where z solves the homogeneous mixed problem with that right-hand side.
"""
from __future__ import annotations

import hashlib

import numpy as np
from scipy.sparse import diags
from scipy.sparse.linalg import splu

from .grid import (
    BoundarySplit,
    Mesh,
    assemble_stiffness,
    divergence_adjoint,
    neumann_load,
)


class MixedPoisson:
    """Factorised reduced system for one (mesh, sigma, Dirichlet set)."""

    def __init__(self, mesh: Mesh, split: BoundarySplit, sigma):
        self.mesh = mesh
        self.split = split
        self.sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (mesh.n_nodes,)).copy()
        self.A = assemble_stiffness(mesh, self.sigma).tocsc()
        self.free = split.free_nodes
        self.fixed = split.dirichlet_nodes
        self.A_ff = self.A[self.free][:, self.free].tocsc()
        self.A_fd = self.A[self.free][:, self.fixed].tocsc()
        self._lu = splu(self.A_ff)
        self._shifted = {}
        self._bounds = {}

    def load(self, mu=None, chi=None, pi=None) -> np.ndarray:
        mesh = self.mesh
        b = np.zeros(mesh.n_nodes)
        if mu is not None:
            b += mesh.lumped_mass * np.asarray(mu, dtype=float)
        if chi is not None:
            b -= divergence_adjoint(mesh, chi)
        if pi is not None:
            b += neumann_load(mesh, self.split, pi)
        return b

    def solve(self, load, g=None) -> np.ndarray:
        z = np.zeros(self.mesh.n_nodes)
        rhs = np.asarray(load, dtype=float)[self.free]
        if g is not None:
            z[self.fixed] = np.asarray(g, dtype=float)[self.fixed]
            rhs = rhs - self.A_fd @ z[self.fixed]
        z[self.free] = self._lu.solve(rhs)
        return z

    def solve_free(self, rhs_free) -> np.ndarray:
        return self._lu.solve(rhs_free)

    def shifted_solver(self, weights, scale: float):
        """Factorisation of A_ff + diag(weights)/scale on the free nodes."""
        key = (float(scale), hashlib.sha1(np.ascontiguousarray(weights).tobytes()).hexdigest())
        lu = self._shifted.get(key)
        if lu is None:
            if len(self._shifted) > 8:
                self._shifted.clear()
            lu = self._shifted[key] = splu((self.A_ff + diags(np.asarray(weights) / scale)).tocsc())
        return lu

    def spectral_bounds(self, weights, iters: int = 50) -> tuple[float, float]:
        """Extreme eigenvalues of diag(weights)^-1 A_ff by power iterations."""
        key = (iters, hashlib.sha1(np.ascontiguousarray(weights).tobytes()).hexdigest())
        if key not in self._bounds:
            s = 1.0 / np.sqrt(np.asarray(weights, dtype=float))
            v = np.cos(np.arange(s.size) + 0.5) + 1.0
            hi = 0.0
            for _ in range(iters):
                w = s * (self.A_ff @ (s * v))
                hi = float(np.linalg.norm(w) / np.linalg.norm(v))
                v = w / np.linalg.norm(w)
            v = np.ones(s.size)
            lo = np.inf
            for _ in range(iters):
                w = self._lu.solve(v / s) / s
                lo = float(np.linalg.norm(v) / np.linalg.norm(w))
                v = w / np.linalg.norm(w)
            self._bounds[key] = (lo, hi)
        return self._bounds[key]

    def energy(self, z, w=None) -> float:
        w = z if w is None else w
        return float(z @ (self.A @ w))


def poisson_handle(mesh: Mesh, split: BoundarySplit, sigma) -> MixedPoisson:
    """Return a cached factorisation keyed by (Dirichlet set, sigma)."""
    sig = np.ascontiguousarray(np.broadcast_to(np.asarray(sigma, dtype=float), (mesh.n_nodes,)))
    key = ("poisson", split.key, hashlib.sha1(sig.tobytes()).hexdigest())
    handle = mesh.cache.get(key)
    if handle is None:
        if len(mesh.cache) > 64:
            mesh.cache.clear()
        handle = mesh.cache[key] = MixedPoisson(mesh, split, sig)
    return handle


def solve_mixed_poisson(mesh, split, sigma, mu=None, chi=None, pi=None, g=None) -> np.ndarray:
    """Solve ``int sigma grad z . grad xi = int mu xi - int chi . grad xi + <pi, xi>``
    for all xi vanishing on the Dirichlet nodes, with z = g there."""
    h = poisson_handle(mesh, split, sigma)
    return h.solve(h.load(mu, chi, pi), g)


def transition_work(mesh, split, sigma, mu=None, chi=None, pi=None, g=None) -> float:
    """Optimal value of ``int mu z - int chi.grad z - 1/2 int sigma|grad z|^2 + <pi, z>``
    over z = g on the Dirichlet part."""
    h = poisson_handle(mesh, split, sigma)
    b = h.load(mu, chi, pi)
    z = h.solve(b, g)
    return float(b @ z - 0.5 * h.energy(z))


def _functional(h: MixedPoisson, f):
    if isinstance(f, tuple):
        f0, fbar = f
    else:
        f0, fbar = f, None
    return h.load(f0, fbar)


def riesz_potential(mesh, split, sigma, f) -> np.ndarray:
    """z with homogeneous data representing the functional f (array or (f0, fbar))."""
    h = poisson_handle(mesh, split, sigma)
    return h.solve(_functional(h, f))


def hminus1_inner(mesh, split, sigma, f, g) -> float:
    h = poisson_handle(mesh, split, sigma)
    bf, bg = _functional(h, f), _functional(h, g)
    zf = h.solve_free(bf[h.free])
    return float(bg[h.free] @ zf)


def hminus1_norm(mesh, split, sigma, f) -> float:
    return float(np.sqrt(max(hminus1_inner(mesh, split, sigma, f, f), 0.0)))


def product_inner(mesh, partition, sigma, f, g) -> float:
    """Sum over species of the dual inner products; f, g have leading axis 2."""
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (2, mesh.n_nodes))
    return sum(hminus1_inner(mesh, partition[k], sigma[k], _component(f, k), _component(g, k)) for k in range(2))


def product_norm(mesh, partition, sigma, f) -> float:
    return float(np.sqrt(max(product_inner(mesh, partition, sigma, f, f), 0.0)))


def _component(f, k):
    if isinstance(f, tuple):
        return (np.asarray(f[0])[k], None if f[1] is None else np.asarray(f[1])[k])
    return np.asarray(f)[k]
