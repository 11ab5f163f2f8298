"""Compiled hot paths.

Everything here runs with the GIL released so that worker threads can touch
the shared parameter vector concurrently. Reads and writes of ``x`` are plain
aligned float64 loads/stores: each cell is atomic, the vector as a whole is not.
"""
import math

from llvmlite import ir
from numba import njit, types
from numba.core import cgutils
from numba.extending import intrinsic

SQUARED = 0
LOGISTIC = 1

REG_NONE = 0
REG_L1 = 1
REG_GROUP_L2 = 2
REG_ELASTIC_NET = 3


@intrinsic
def _sched_yield(typingctx):
    # resolved by symbol name at link time, so the caller stays cacheable
    sig = types.int32()

    def codegen(context, builder, signature, args):
        fnty = ir.FunctionType(ir.IntType(32), [])
        fn = cgutils.get_or_insert_function(builder.module, fnty, "sched_yield")
        return builder.call(fn, [])

    return sig, codegen


@njit(nogil=True, cache=True)
def loss_deriv(kind, z, b):
    if kind == SQUARED:
        return z - b
    # -b * sigmoid(-b z), branch form keeps exp() argument nonpositive
    t = -b * z
    if t >= 0.0:
        return -b / (1.0 + math.exp(-t))
    e = math.exp(t)
    return -b * e / (1.0 + e)


@njit(nogil=True, cache=True)
def loss_value(kind, z, b):
    if kind == SQUARED:
        r = z - b
        return 0.5 * r * r
    t = -b * z
    if t > 0.0:
        return t + math.log1p(math.exp(-t))
    return math.log1p(math.exp(t))


@njit(nogil=True, cache=True)
def margins(indptr, indices, data, x, lo, hi, out):
    for i in range(lo, hi):
        z = 0.0
        for e in range(indptr[i], indptr[i + 1]):
            z += data[e] * x[indices[e]]
        out[i] = z


@njit(nogil=True, cache=True)
def loss_derivs(kind, z, labels, lo, hi, out):
    for i in range(lo, hi):
        out[i] = loss_deriv(kind, z[i], labels[i])


@njit(nogil=True, cache=True)
def weighted_row_sum(indptr, indices, data, coef, lo, hi, out):
    """out <- sum_{i in [lo, hi)} coef[i] * a_i, accumulated in index order."""
    out[:] = 0.0
    for i in range(lo, hi):
        c = coef[i]
        if c == 0.0:
            continue
        for e in range(indptr[i], indptr[i + 1]):
            out[indices[e]] += c * data[e]


@njit(nogil=True, cache=True)
def prox(kind, lam, lam2, v, size, step, out):
    if kind == REG_NONE:
        for q in range(size):
            out[q] = v[q]
    elif kind == REG_L1 or kind == REG_ELASTIC_NET:
        thr = step * lam
        scale = 1.0
        if kind == REG_ELASTIC_NET:
            scale = 1.0 / (1.0 + step * lam2)
        for q in range(size):
            a = abs(v[q]) - thr
            if a > 0.0:
                out[q] = math.copysign(a, v[q]) * scale
            else:
                out[q] = 0.0
    else:
        nrm = 0.0
        for q in range(size):
            nrm += v[q] * v[q]
        nrm = math.sqrt(nrm)
        shrink = 0.0
        if nrm > step * lam:
            shrink = 1.0 - step * lam / nrm
        for q in range(size):
            out[q] = shrink * v[q]


@njit(nogil=True, cache=True)
def _others(counts, w):
    s = 0
    for v in range(counts.shape[0]):
        if v != w:
            s += counts[v]
    return s


@njit(nogil=True, cache=True)
def _others_idle(done, holding, w):
    for v in range(done.shape[0]):
        if v != w and done[v] == 0 and holding[v] == 0:
            return False
    return True


@njit(nogil=True, cache=True)
def worker_loop(w, x, snapshot, full_grad, dphi_snap,
                indptr, indices, data, labels, loss_kind, ridge,
                gptr, order, coord_block, coord_pos,
                reg_kind, lam, lam2, step,
                batches, blocks, holds,
                counts, done, holding, status,
                stale_out, held_out, vbuf, xbuf, ubuf):
    """One worker's share of an epoch: Read -> Compute -> Update, no locks.

    ``counts[v]`` is the number of block writes worker ``v`` has completed and
    is written only by ``v``; staleness of an iteration is the number of writes
    other workers completed between its read and its write.
    """
    niter = blocks.shape[0]
    bsz = batches.shape[1]
    inv_b = 1.0 / bsz
    for t in range(niter):
        j = blocks[t]
        lo = gptr[j]
        size = gptr[j + 1] - lo
        before = _others(counts, w)

        # read x-hat lazily (row supports + block j) and build the
        # block-j slice of the variance-reduced gradient
        for q in range(size):
            vbuf[q] = 0.0
        for r in range(bsz):
            i = batches[t, r]
            z = 0.0
            for e in range(indptr[i], indptr[i + 1]):
                z += data[e] * x[indices[e]]
            coef = (loss_deriv(loss_kind, z, labels[i]) - dphi_snap[i]) * inv_b
            if coef != 0.0:
                for e in range(indptr[i], indptr[i + 1]):
                    c = indices[e]
                    if coord_block[c] == j:
                        vbuf[coord_pos[c]] += coef * data[e]
        if ridge != 0.0:
            for q in range(size):
                c = order[lo + q]
                vbuf[q] += ridge * (x[c] - snapshot[c])

        d = holds[t]
        if d > 0:
            holding[w] = 1
            while _others(counts, w) - before < d:
                if _others_idle(done, holding, w):
                    break
                _sched_yield()
            holding[w] = 0
        released = _others(counts, w)

        for q in range(size):
            c = order[lo + q]
            xbuf[q] = x[c] - step * (vbuf[q] + full_grad[c])
        prox(reg_kind, lam, lam2, xbuf, size, step, ubuf)
        for q in range(size):
            if not math.isfinite(ubuf[q]):
                status[w] = 1
        if status[w] != 0:
            break
        for q in range(size):
            x[order[lo + q]] = ubuf[q]
        counts[w] += 1
        stale_out[t] = _others(counts, w) - before
        held_out[t] = released - before
    done[w] = 1
