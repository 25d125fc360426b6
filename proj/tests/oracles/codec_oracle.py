"""Reference scale schedules and a residual-quantization case, written to tests/golden."""
import math
import pathlib

import numpy as np

GOLDEN = pathlib.Path(__file__).resolve().parent.parent / "golden"


def rnd(x):
    return int(math.floor(x + 0.5))


def schedule(n, h, w):
    longer, shorter = max(h, w), min(h, w)
    if n == 1:
        return [(1, 1)]
    major = []
    for k in range(n):
        m = rnd(longer ** (k / (n - 1)))
        if k:
            m = max(m, major[-1] + 1)
        major.append(m)
    major = [min(m, longer - (n - 1 - k)) for k, m in enumerate(major)]
    out, prev = [], 1
    for k, m in enumerate(major):
        minor = min(max(rnd(m * shorter / longer), prev), shorter)
        if k == 0:
            minor = 1
        if k == n - 1:
            minor = shorter
        prev = minor
        out.append((m, minor) if h >= w else (minor, m))
    return out


def bins(src, dst):
    return [(i * src // dst, (i + 1) * src // dst) for i in range(dst)]


def down(f, g):
    c, h, w = f.shape
    out = np.zeros((c, g[0], g[1]))
    for i, (y0, y1) in enumerate(bins(h, g[0])):
        for j, (x0, x1) in enumerate(bins(w, g[1])):
            out[:, i, j] = f[:, y0:y1, x0:x1].mean(axis=(1, 2))
    return out


def up(f, g):
    c, h, w = f.shape
    out = np.zeros((c, g[0], g[1]))
    for i, (y0, y1) in enumerate(bins(g[0], h)):
        for j, (x0, x1) in enumerate(bins(g[1], w)):
            out[:, y0:y1, x0:x1] = f[:, i, j][:, None, None]
    return out


def encode(f, cb, sched):
    r = f.copy()
    grids = []
    for g in sched:
        d = down(r, g)
        ids = np.zeros(g, dtype=int)
        for y in range(g[0]):
            for x in range(g[1]):
                dist = ((cb - d[:, y, x]) ** 2).sum(axis=1)
                ids[y, x] = int(np.argmin(dist))
        grids.append(ids)
        r = r - up(cb[ids].transpose(2, 0, 1), f.shape[1:])
    return grids, r


def main():
    cases = [(10, 16, 16), (5, 16, 16), (5, 8, 8), (6, 16, 16), (3, 4, 4), (4, 8, 4), (3, 3, 7), (1, 1, 1)]
    with open(GOLDEN / "schedules.txt", "w") as fh:
        for n, h, w in cases:
            sizes = " ".join(f"{a}x{b}" for a, b in schedule(n, h, w))
            fh.write(f"{n} {h} {w} {sizes}\n")

    rng = np.random.default_rng(7)
    c, h, w, v = 3, 6, 6, 8
    f = np.round(rng.normal(size=(c, h, w)), 3)
    cb = np.round(rng.normal(scale=0.7, size=(v, c)), 3)
    cb[0] = 0.0
    sched = schedule(4, h, w)
    grids, r = encode(f, cb, sched)
    with open(GOLDEN / "rq_case.txt", "w") as fh:
        fh.write(f"{c} {h} {w} {v} {len(sched)}\n")
        fh.write(" ".join(repr(float(x)) for x in f.ravel()) + "\n")
        fh.write(" ".join(repr(float(x)) for x in cb.ravel()) + "\n")
        for g, ids in zip(sched, grids):
            fh.write(f"{g[0]} {g[1]} " + " ".join(str(int(i)) for i in ids.ravel()) + "\n")
        fh.write(" ".join(repr(float(x)) for x in (f - r).ravel()) + "\n")


if __name__ == "__main__":
    main()
