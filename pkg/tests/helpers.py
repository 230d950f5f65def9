"""Finite-difference oracle and other independent reference routines."""
import numpy as np


def central_difference(f, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Gradient of scalar ``f`` at ``x`` by central differences, one coordinate at a time."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = float(f(x))
        flat[i] = orig - step
        down = float(f(x))
        flat[i] = orig
        g[i] = (up - down) / (2 * step)
    return grad


def relative_error(analytic, numeric) -> float:
    a = np.ravel(analytic)
    n = np.ravel(numeric)
    scale = max(np.linalg.norm(a), np.linalg.norm(n), 1e-8)
    return float(np.linalg.norm(a - n) / scale)


def brute_force_semi_hard(embeddings, labels, margin, fallback="nearest"):
    """Loop-based reference for :func:`selflearn.mining.mine_semi_hard`."""
    e = np.asarray(embeddings, dtype=np.float64)
    n = len(labels)
    dist = [[float(np.sqrt(np.sum((e[i] - e[j]) ** 2))) for j in range(n)] for i in range(n)]
    out = []
    for a in range(n):
        for p in range(n):
            if p == a or labels[p] != labels[a]:
                continue
            dap = dist[a][p]
            semi, hard, easy = [], [], []
            for q in range(n):
                if labels[q] == labels[a]:
                    continue
                dan = dist[a][q]
                if dan < dap:
                    hard.append((dan, q))
                elif dap - dan + margin > 0:
                    semi.append((dan, q))
                else:
                    easy.append((dan, q))
            if semi:
                out.append((a, p, min(semi)[1]))
            elif fallback == "skip":
                continue
            elif hard:
                best = max(d for d, _ in hard)
                out.append((a, p, min(q for d, q in hard if d == best)))
            elif easy:
                out.append((a, p, min(easy)[1]))
    return out


def brute_force_nn(ref, ref_y, queries):
    """Exhaustive 1-NN scan: (labels, distances), ties to the lower index."""
    labels, dists = [], []
    for q in queries:
        best_i, best_d = None, None
        for i, r in enumerate(ref):
            d = float(np.sqrt(np.sum((q - r) ** 2)))
            if best_d is None or d < best_d:
                best_i, best_d = i, d
        labels.append(ref_y[best_i])
        dists.append(best_d)
    return np.array(labels), np.array(dists)


def silhouette(x, y) -> float:
    """Mean silhouette coefficient, computed directly from the definition."""
    x = np.asarray(x)
    y = np.asarray(y)
    scores = []
    for i in range(len(x)):
        d = np.sqrt(((x - x[i]) ** 2).sum(axis=1))
        same = (y == y[i])
        same[i] = False
        if not same.any():
            continue
        a = d[same].mean()
        b = min(d[y == c].mean() for c in np.unique(y) if c != y[i])
        scores.append((b - a) / max(a, b))
    return float(np.mean(scores))


ACCEPTANCE_LINES: list[str] = []


def report_criterion(number: int, title: str, ok: bool, detail: str) -> None:
    """Print and remember one PASS/FAIL line for the acceptance summary."""
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
