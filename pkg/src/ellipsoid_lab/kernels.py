"""Hot numeric kernels, each with a numba and a pure-numpy implementation.

The public wrappers at the bottom dispatch on :data:`ellipsoid_lab._accel.USE_NUMBA`.
Both paths return the same values up to floating-point summation order.
"""
import math

import numpy as np

from . import _accel
from ._accel import njit

# ---------------------------------------------------------------------------
# Cyclic Jacobi eigensolver for small dense symmetric matrices
# ---------------------------------------------------------------------------


@njit
def _jacobi_eig_nb(a, max_sweeps):
    n = a.shape[0]
    a = a.copy()
    v = np.eye(n)
    scale = 0.0
    for i in range(n):
        for j in range(n):
            scale += a[i, j] * a[i, j]
    if scale == 0.0:
        return np.zeros(n), v, 0
    target = scale * 1e-32
    for sweep in range(max_sweeps + 1):
        off = 0.0
        for p in range(n):
            for q in range(p + 1, n):
                off += 2.0 * a[p, q] * a[p, q]
        if off <= target:
            return np.diag(a).copy(), v, sweep
        if sweep == max_sweeps:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if theta >= 0.0:
                    t = 1.0 / (theta + math.sqrt(theta * theta + 1.0))
                else:
                    t = -1.0 / (-theta + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                for k in range(n):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = c * akp - s * akq
                    a[k, q] = s * akp + c * akq
                for k in range(n):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = c * apk - s * aqk
                    a[q, k] = s * apk + c * aqk
                a[p, q] = 0.0
                a[q, p] = 0.0
                for k in range(n):
                    vkp = v[k, p]
                    vkq = v[k, q]
                    v[k, p] = c * vkp - s * vkq
                    v[k, q] = s * vkp + c * vkq
    return np.diag(a).copy(), v, -1


def _jacobi_eig_np(a, max_sweeps):
    n = a.shape[0]
    a = np.array(a, dtype=float)
    v = np.eye(n)
    scale = float(np.sum(a * a))
    if scale == 0.0:
        return np.zeros(n), v, 0
    target = scale * 1e-32
    iu = np.triu_indices(n, 1)
    for sweep in range(max_sweeps + 1):
        if 2.0 * float(np.sum(a[iu] ** 2)) <= target:
            return np.diag(a).copy(), v, sweep
        if sweep == max_sweeps:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                cols = a[:, [p, q]]
                a[:, p] = c * cols[:, 0] - s * cols[:, 1]
                a[:, q] = s * cols[:, 0] + c * cols[:, 1]
                rows = a[[p, q], :]
                a[p, :] = c * rows[0] - s * rows[1]
                a[q, :] = s * rows[0] + c * rows[1]
                a[p, q] = a[q, p] = 0.0
                vc = v[:, [p, q]]
                v[:, p] = c * vc[:, 0] - s * vc[:, 1]
                v[:, q] = s * vc[:, 0] + c * vc[:, 1]
    return np.diag(a).copy(), v, -1


# ---------------------------------------------------------------------------
# DPP averaging operator assembly
# ---------------------------------------------------------------------------
# Domain codes: 0 = open ball (center=dom_a, radius=dom_r), 1 = open box (dom_a, dom_b).


@njit
def _inside_nb(q, kind, dom_a, dom_b, dom_r):
    n = q.shape[0]
    if kind == 0:
        s = 0.0
        for d in range(n):
            t = q[d] - dom_a[d]
            s += t * t
        return s < dom_r * dom_r
    for d in range(n):
        if not (dom_a[d] < q[d] < dom_b[d]):
            return False
    return True


@njit
def _assemble_nb(nodes, shapes, ynodes, yweights, eps, origin, h, dims,
                 unknown, fixed, kind, dom_a, dom_b, dom_r):
    m, n = nodes.shape
    nq = ynodes.shape[0]
    ncorner = 1 << n
    n_unknown = 0
    for i in range(unknown.shape[0]):
        if unknown[i] >= 0:
            n_unknown += 1
    strides = np.empty(n, np.int64)
    stride = 1
    for d in range(n - 1, -1, -1):
        strides[d] = stride
        stride *= dims[d]

    indptr = np.zeros(m + 1, np.int64)
    cap = max(16, m * 32)
    indices = np.empty(cap, np.int64)
    data = np.empty(cap, np.float64)
    b = np.zeros(m)
    outside = np.zeros(m, np.bool_)

    acc = np.zeros(n_unknown)
    mark = np.full(n_unknown, -1, np.int64)
    touched = np.empty(n_unknown, np.int64)
    q = np.empty(n)
    base = np.empty(n, np.int64)
    frac = np.empty(n)
    nnz = 0
    for row in range(m):
        ntouch = 0
        for k in range(nq):
            for d in range(n):
                s = 0.0
                for e in range(n):
                    s += shapes[row, d, e] * ynodes[k, e]
                q[d] = nodes[row, d] + eps * s
            if not _inside_nb(q, kind, dom_a, dom_b, dom_r):
                outside[row] = True
                continue
            for d in range(n):
                pos = (q[d] - origin[d]) / h
                i0 = int(math.floor(pos))
                if i0 < 0:
                    i0 = 0
                if i0 > dims[d] - 2:
                    i0 = dims[d] - 2
                base[d] = i0
                frac[d] = pos - i0
            for c in range(ncorner):
                wt = yweights[k]
                flat = 0
                for d in range(n):
                    if (c >> d) & 1:
                        wt *= frac[d]
                        flat += (base[d] + 1) * strides[d]
                    else:
                        wt *= 1.0 - frac[d]
                        flat += base[d] * strides[d]
                if wt == 0.0:
                    continue
                j = unknown[flat]
                if j < 0:
                    b[row] += wt * fixed[flat]
                else:
                    if mark[j] != row:
                        mark[j] = row
                        acc[j] = 0.0
                        touched[ntouch] = j
                        ntouch += 1
                    acc[j] += wt
        if nnz + ntouch > cap:
            newcap = max(2 * cap, nnz + ntouch)
            ni = np.empty(newcap, np.int64)
            nd = np.empty(newcap, np.float64)
            ni[:nnz] = indices[:nnz]
            nd[:nnz] = data[:nnz]
            indices = ni
            data = nd
            cap = newcap
        cols = np.sort(touched[:ntouch])
        for it in range(ntouch):
            indices[nnz] = cols[it]
            data[nnz] = acc[cols[it]]
            nnz += 1
        indptr[row + 1] = nnz
    return indptr, indices[:nnz].copy(), data[:nnz].copy(), b, outside


def _inside_np(q, kind, dom_a, dom_b, dom_r):
    if kind == 0:
        return np.sum((q - dom_a) ** 2, axis=-1) < dom_r * dom_r
    return np.all((q > dom_a) & (q < dom_b), axis=-1)


def _assemble_np(nodes, shapes, ynodes, yweights, eps, origin, h, dims,
                 unknown, fixed, kind, dom_a, dom_b, dom_r, chunk=2048):
    from scipy import sparse

    m, n = nodes.shape
    nq = ynodes.shape[0]
    n_unknown = int(np.count_nonzero(unknown >= 0))
    strides = np.ones(n, dtype=np.int64)
    for d in range(n - 2, -1, -1):
        strides[d] = strides[d + 1] * dims[d + 1]
    corners = np.array([[(c >> d) & 1 for d in range(n)] for c in range(1 << n)], dtype=np.int64)

    b = np.zeros(m)
    outside = np.zeros(m, dtype=bool)
    blocks = []
    for start in range(0, m, chunk):
        stop = min(start + chunk, m)
        rows = np.arange(start, stop)
        q = nodes[rows, None, :] + eps * np.einsum("rde,ke->rkd", shapes[rows], ynodes)
        ins = _inside_np(q, kind, dom_a, dom_b, dom_r)
        outside[rows] = ~np.all(ins, axis=1)
        r_idx, k_idx = np.nonzero(ins)
        qi = q[r_idx, k_idx]
        t = (qi - origin) / h
        i0 = np.clip(np.floor(t).astype(np.int64), 0, dims - 2)
        fr = t - i0
        # (points, corners)
        cidx = i0[:, None, :] + corners[None, :, :]
        cw = np.prod(np.where(corners[None, :, :] == 1, fr[:, None, :], 1.0 - fr[:, None, :]), axis=2)
        cw = cw * yweights[k_idx][:, None]
        flat = np.sum(cidx * strides, axis=2)
        j = unknown[flat]
        rr = np.broadcast_to(r_idx[:, None], j.shape)
        fixed_mask = (j < 0) & (cw != 0.0)
        np.add.at(b, start + rr[fixed_mask], cw[fixed_mask] * fixed[flat[fixed_mask]])
        um = (j >= 0) & (cw != 0.0)
        blk = sparse.csr_matrix((cw[um], (rr[um], j[um])), shape=(stop - start, n_unknown))
        blk.sum_duplicates()
        blocks.append(blk)
    mat = sparse.vstack(blocks, format="csr")
    mat.sort_indices()
    return mat.indptr.astype(np.int64), mat.indices.astype(np.int64), mat.data, b, outside


# ---------------------------------------------------------------------------
# Holder quotient scan over lattice node pairs
# ---------------------------------------------------------------------------


@njit
def _holder_scan_nb(ints, values, powtab, eps_alpha):
    m, n = ints.shape
    best = 0.0
    bi = 0
    bj = 0
    for i in range(m):
        vi = values[i]
        for j in range(i + 1, m):
            du = abs(vi - values[j])
            if du == 0.0:
                continue
            d2 = 0
            for d in range(n):
                t = ints[i, d] - ints[j, d]
                d2 += t * t
            qv = du / (powtab[d2] + eps_alpha)
            if qv > best:
                best = qv
                bi = i
                bj = j
    return best, bi, bj


def _holder_scan_np(ints, values, powtab, eps_alpha, block=64):
    m = ints.shape[0]
    best, bi, bj = 0.0, 0, 0
    for start in range(0, m, block):
        stop = min(start + block, m)
        d = ints[start:stop, None, :] - ints[None, :, :]
        d2 = np.sum(d * d, axis=2)
        du = np.abs(values[start:stop, None] - values[None, :])
        qv = du / (powtab[d2] + eps_alpha)
        # keep strict upper triangle to match the pair ordering of the numba path
        rows = np.arange(start, stop)[:, None]
        qv = np.where(np.arange(m)[None, :] > rows, qv, 0.0)
        k = int(np.argmax(qv))
        r, c = divmod(k, m)
        if qv[r, c] > best:
            best, bi, bj = float(qv[r, c]), start + r, c
    return best, bi, bj


# ---------------------------------------------------------------------------
# Dispatch
# ---------------------------------------------------------------------------


def jacobi_eig(a, max_sweeps=100):
    """Return ``(diag, V, sweeps)``; ``sweeps == -1`` signals non-convergence."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    if _accel.USE_NUMBA:
        return _jacobi_eig_nb(a, max_sweeps)
    return _jacobi_eig_np(a, max_sweeps)


def assemble_average_operator(nodes, shapes, ynodes, yweights, eps, origin, h, dims,
                              unknown, fixed, kind, dom_a, dom_b, dom_r):
    args = (
        np.ascontiguousarray(nodes, dtype=np.float64),
        np.ascontiguousarray(shapes, dtype=np.float64),
        np.ascontiguousarray(ynodes, dtype=np.float64),
        np.ascontiguousarray(yweights, dtype=np.float64),
        float(eps),
        np.ascontiguousarray(origin, dtype=np.float64),
        float(h),
        np.ascontiguousarray(dims, dtype=np.int64),
        np.ascontiguousarray(unknown, dtype=np.int64),
        np.ascontiguousarray(fixed, dtype=np.float64),
        int(kind),
        np.ascontiguousarray(dom_a, dtype=np.float64),
        np.ascontiguousarray(dom_b, dtype=np.float64),
        float(dom_r),
    )
    if _accel.USE_NUMBA:
        return _assemble_nb(*args)
    return _assemble_np(*args)


def holder_scan(ints, values, powtab, eps_alpha):
    ints = np.ascontiguousarray(ints, dtype=np.int64)
    values = np.ascontiguousarray(values, dtype=np.float64)
    powtab = np.ascontiguousarray(powtab, dtype=np.float64)
    if _accel.USE_NUMBA:
        best, i, j = _holder_scan_nb(ints, values, powtab, float(eps_alpha))
    else:
        best, i, j = _holder_scan_np(ints, values, powtab, float(eps_alpha))
    return float(best), int(i), int(j)
