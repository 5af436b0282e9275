"""Cell and face kernels: space-time predictors, trace projection, Rusanov
flux, corrector, a first-order FV patch update, and a synthetic-cost kernel
for scheduler studies.

Conventions: nodal arrays carry the component axis first, then one axis of
p + 1 nodes per space dimension.  Face traces drop the face-normal axis.
Stored traces are integrated over the time step; the Riemann solve collapses
to a single spatial problem on the time-averaged states, and the corrector
fuses the predictor end state with the jump between the Riemann outcome and
the cell's own time-integrated boundary flux.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

from .basis import PolynomialBasis, get_basis
from .errors import EnclaveDgError, NotReadyError
from .mesh import CellClass
from .pde import PdeDescriptor


@dataclass
class PredictorStore:
    """Per-cell predictor results kept for the Riemann and corrector phases.

    q_int:    time integral of the space-time predictor (volume nodal data)
    q_end:    predictor evaluated at the end of the step
    trace_q:  q_int extrapolated to each face, keyed (axis, side)
    trace_f:  time-integrated nodal flux extrapolated to each face
    """

    q_int: np.ndarray
    q_end: np.ndarray
    trace_q: dict
    trace_f: dict
    iterations: int = 0
    converged: bool = True
    checksum: float | None = None


class CellSolution:
    """DG coefficients plus the completion marker the scheduler polls.

    The marker is written only by the worker finishing the cell's predictor
    task and read by traversal agents; attribute stores are atomic under the
    interpreter so no further synchronisation is required.
    """

    __slots__ = ("key", "q", "stp_complete", "klass", "predictor", "task_state")

    def __init__(self, key, q):
        self.key = key
        self.q = q
        self.stp_complete = True
        self.klass = CellClass.ENCLAVE
        self.predictor = None
        self.task_state = "idle"


def _div_flux(q, pde, basis, edges):
    """Nodal divergence of the interpolated flux, shape like q."""
    out = np.zeros_like(q)
    dim = q.ndim - 1
    for a in range(dim):
        fa = pde.flux(q, a)
        out += np.moveaxis(np.tensordot(basis.diff_matrix, fa, axes=(1, 1 + a)), 0, 1 + a) / edges[a]
    return out


def project_to_faces(q_vol, basis: PolynomialBasis):
    """Extrapolate volume nodal data to the 2d faces with the trace vectors."""
    dim = q_vol.ndim - 1
    return {
        (a, s): np.tensordot(basis.trace(s), q_vol, axes=(0, 1 + a))
        for a in range(dim) for s in (0, 1)
    }


def stp_linear(q, pde: PdeDescriptor, dt, basis: PolynomialBasis, edges) -> PredictorStore:
    """Predictor for linear systems via the terminating derivative recurrence.

    Repeated application of the nodal flux divergence is exact on the tensor
    polynomial space, so the resulting series is the exact cell-local
    evolution; it terminates after dim * p + 1 terms.
    """
    if not pde.is_linear:
        raise EnclaveDgError("stp_linear requires a linear flux")
    dim = q.ndim - 1
    q_end = q.copy()
    q_int = dt * q
    term = q
    fact = 1.0
    for k in range(1, dim * basis.order + 1):
        term = -_div_flux(term, pde, basis, edges)
        fact *= k
        q_end += (dt ** k / fact) * term
        q_int += (dt ** (k + 1) / (fact * (k + 1))) * term
    trace_q = project_to_faces(q_int, basis)
    trace_f = {
        (a, s): pde.flux(tr, a)
        for (a, s), tr in trace_q.items()
    }
    return PredictorStore(q_int, q_end, trace_q, trace_f)


def _time_operators(basis: PolynomialBasis):
    """Inverse of the weak-in-time collocation matrix and the initial-value lift."""
    n = basis.n
    k = np.outer(basis.trace_right, basis.trace_right)
    k -= basis.diff_matrix.T * basis.weights[None, :]
    return np.linalg.inv(k), basis.trace_left.copy()


_TIME_OPS: dict[int, tuple] = {}


def stp_picard(q, pde: PdeDescriptor, dt, basis: PolynomialBasis, edges,
               tol=1e-10, max_iter=None) -> PredictorStore:
    """Space-time predictor through fixed-point iteration on the nodal
    space-time degrees of freedom (weak-in-time collocation form).

    Iterates until the successive-iterate max norm drops below tol or
    max_iter (default 2(p+1)) is hit; non-convergence is flagged, not fatal.
    """
    if max_iter is None:
        max_iter = 2 * basis.n
    if basis.order not in _TIME_OPS:
        _TIME_OPS[basis.order] = _time_operators(basis)
    kinv, lift = _TIME_OPS[basis.order]
    nt = basis.n
    qhat = np.repeat(q[None], nt, axis=0)
    rhs0 = np.tensordot(kinv @ lift[:, None], q[None], axes=(1, 0))
    w = basis.weights
    iterations = 0
    converged = False
    for it in range(1, max_iter + 1):
        iterations = it
        rhs = np.stack([-dt * w[r] * _div_flux(qhat[r], pde, basis, edges) for r in range(nt)])
        new = rhs0 + np.tensordot(kinv, rhs, axes=(1, 0))
        delta = float(np.abs(new - qhat).max())
        qhat = new
        if delta < tol:
            converged = True
            break
    q_end = np.tensordot(basis.trace_right, qhat, axes=(0, 0))
    q_int = dt * np.tensordot(w, qhat, axes=(0, 0))
    trace_q = project_to_faces(q_int, basis)
    dim = q.ndim - 1
    trace_f = {}
    for a in range(dim):
        flux_nodes = np.stack([pde.flux(qhat[r], a) for r in range(nt)])
        flux_int = dt * np.tensordot(w, flux_nodes, axes=(0, 0))
        for s in (0, 1):
            trace_f[(a, s)] = np.tensordot(basis.trace(s), flux_int, axes=(0, 1 + a))
    return PredictorStore(q_int, q_end, trace_q, trace_f,
                          iterations=iterations, converged=converged)


def riemann_rusanov(trace_lo, trace_hi, pde: PdeDescriptor, axis, sign=1):
    """Pointwise Rusanov flux along +axis (times sign) from two face states.

    Symmetric by construction: evaluating from the opposite side with the
    flipped normal yields the exact negation, so redundant solves agree.
    """
    lam = np.maximum(pde.max_eigenvalue(trace_lo, axis), pde.max_eigenvalue(trace_hi, axis))
    central = 0.5 * (pde.flux(trace_lo, axis) + pde.flux(trace_hi, axis))
    jump = 0.5 * lam * (trace_hi - trace_lo)
    if sign >= 0:
        return central - jump
    return -central + jump


def corrector(store: PredictorStore, outcomes: dict, basis: PolynomialBasis, edges):
    """Next-step solution: predictor end state plus surface jump correction.

    outcomes maps (axis, side) to the time-integrated Riemann outcome of that
    face, oriented along +axis (for hanging faces, the accumulated
    restriction).  Missing outcomes are an ordering bug.
    """
    q = store.q_end.copy()
    dim = q.ndim - 1
    for a in range(dim):
        for s in (0, 1):
            if (a, s) not in outcomes:
                raise AssertionError(f"face outcome missing for axis {a} side {s}")
            diff = outcomes[(a, s)] - store.trace_f[(a, s)]
            sign = 1.0 if s == 1 else -1.0
            v = sign * basis.trace(s) / (basis.weights * edges[a])
            q -= np.moveaxis(np.tensordot(v, diff, axes=0), 0, 1 + a)
    return q


def synthetic_stp(cost_units, q, dt, pde: PdeDescriptor, basis: PolynomialBasis) -> PredictorStore:
    """Identity predictor preceded by a verifiable floating-point recurrence.

    cost_units counts elementwise multiply-add updates, executed on a fixed
    buffer in blocks so the work releases the interpreter lock; the fixed
    point of the recurrence keeps values bounded and the checksum
    deterministic.
    """
    if cost_units < 0:
        raise EnclaveDgError("cost_units must be >= 0")
    checksum = 0.0
    if cost_units:
        buf = _SYNTH_BASE.copy()
        block = buf.size
        remaining = cost_units
        while remaining > 0:
            np.multiply(buf, 0.999999, out=buf)
            np.add(buf, 0.25e-6, out=buf)
            remaining -= block
        checksum = float(buf[::997].sum())
    q_int = dt * q
    trace_q = project_to_faces(q_int, basis)
    trace_f = {key: pde.flux(tr, key[0]) for key, tr in trace_q.items()}
    return PredictorStore(q_int, q.copy(), trace_q, trace_f, checksum=checksum)


_SYNTH_BASE = (np.arange(16384, dtype=np.float64) % 97) / 97.0 + 0.125


def fv_patch_update(patch, pde: PdeDescriptor, dt, edges, halos):
    """First-order Godunov/Rusanov update of a (2p+1)^d patch.

    halos maps (axis, side) to the neighbouring boundary layer; a missing
    layer is an error.  Interfaces are swept row by row in the
    straightforward (unfused) formulation, which keeps this kernel markedly
    heavier per degree of freedom than the DG cell kernels.
    """
    dim = patch.ndim - 1
    k = patch.shape[1]
    for a in range(dim):
        for s in (0, 1):
            if (a, s) not in halos or halos[(a, s)] is None:
                raise NotReadyError(f"halo layer missing for axis {a} side {s}")
    out = patch.copy()
    for a in range(dim):
        dx = edges[a] / k
        lo = np.expand_dims(halos[(a, 0)], 1 + a)
        hi = np.expand_dims(halos[(a, 1)], 1 + a)
        ext = np.concatenate([lo, patch, hi], axis=1 + a)
        ext = np.moveaxis(ext, 1 + a, 1)
        fluxes = []
        for i in range(k + 1):
            fluxes.append(riemann_rusanov(ext[:, i], ext[:, i + 1], pde, a))
        for i in range(k):
            upd = (dt / dx) * (fluxes[i + 1] - fluxes[i])
            sl = np.moveaxis(out, 1 + a, 1)
            sl[:, i] -= upd
    return out


def patch_boundary_layers(patch):
    """Outermost volume layers of a patch, keyed (axis, side)."""
    dim = patch.ndim - 1
    out = {}
    for a in range(dim):
        mv = np.moveaxis(patch, 1 + a, 1)
        out[(a, 0)] = mv[:, 0].copy()
        out[(a, 1)] = mv[:, -1].copy()
    return out


def admissible_dt(cells, pde: PdeDescriptor, order, cfl_safety, mesh):
    """Global step size: cfl * min over cells of h / ((2p+1) lambda_max)."""
    best = None
    for key, q in cells:
        lam = 0.0
        for a in range(mesh.dim):
            lam = max(lam, float(pde.max_eigenvalue(q, a).max()))
        if lam <= 0.0:
            continue
        h = min(mesh.cell_edges(key[0]))
        cand = h / ((2 * order + 1) * lam)
        best = cand if best is None else min(best, cand)
    if best is None:
        raise EnclaveDgError("no positive wave speed anywhere; cannot pick a time step")
    return cfl_safety * best
