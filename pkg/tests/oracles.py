"""Independent reference implementations used as test oracles.

Everything here is written with explicit Python loops and math.exp so it
shares no code path with the production implementation it checks.
"""

import math

from cxralign.loss import LossConfig


def naive_total(images, texts, graphs, clinical, cfg: LossConfig) -> float:
    images = [list(map(float, r)) for r in images]
    texts = [list(map(float, r)) for r in texts]
    graphs = [list(map(float, r)) for r in graphs] if graphs is not None else None
    b = len(images)
    q = len(texts)

    def dot(u, v):
        return sum(x * y for x, y in zip(u, v))

    def normalize(rows):
        out = []
        for r in rows:
            n = math.sqrt(sum(x * x for x in r))
            out.append([x / n for x in r])
        return out

    def sim(rows):
        n = len(rows)
        raw = [[dot(rows[i], rows[j]) for j in range(n)] for i in range(n)]
        return [[(raw[i][j] + raw[j][i]) / 2.0 for j in range(n)] for i in range(n)]

    def threshold_labels(s, tau):
        n = len(s)
        y = [
            [((s[i][j] - tau) / (1.0 - tau)) if s[i][j] > tau else 0.0 for j in range(n)]
            for i in range(n)
        ]
        for i in range(n):
            row_sum = sum(y[i])
            y[i] = [v / row_sum for v in y[i]]
        return y

    labels = {}
    if "t" in cfg.streams:
        labels["t"] = threshold_labels(sim(texts), cfg.tau_t)
    if "c" in cfg.streams:
        labels["c"] = threshold_labels(sim(normalize([list(r) for r in clinical])), cfg.tau_c)
    if "g" in cfg.streams:
        labels["g"] = threshold_labels(sim(graphs), cfg.tau_g)
    if not labels:
        labels["nce"] = [[1.0 if i == j else 0.0 for j in range(q)] for i in range(q)]
    weight = {"t": cfg.w_t, "c": cfg.w_c, "g": cfg.w_g, "nce": 1.0}

    def softmax(row):
        m = max(row)
        exps = [math.exp(x - m) for x in row]
        s = sum(exps)
        return [e / s for e in exps]

    blocks = {"image": images, "text": texts, "graph": graphs}
    mods = [m for m in ("image", "text", "graph") if m in cfg.modalities]
    terms = {}
    for qm in mods:
        for km in mods:
            if qm == km:
                continue
            if qm == "image":
                queries, row_idx = blocks["image"], list(range(b))
            elif km == "image":
                queries, row_idx = blocks[qm][:b], list(range(b))
            else:
                queries, row_idx = blocks[qm], list(range(q))
            if km == "image":
                keys, col_idx, renorm = blocks["image"], list(range(b)), True
            else:
                keys, col_idx, renorm = blocks[km], list(range(q)), False
            probs = [softmax([dot(qv, kv) / cfg.temperature for kv in keys]) for qv in queries]
            for stream, full in labels.items():
                acc = 0.0
                for out_i, i in enumerate(row_idx):
                    row = [full[i][j] for j in col_idx]
                    if renorm:
                        row_sum = sum(row)
                        row = [v / row_sum for v in row]
                    for j, y in enumerate(row):
                        if y > 0.0:
                            acc += y * math.log(y / probs[out_i][j])
                terms[f"{qm}->{km}/{stream}"] = weight[stream] * acc / len(row_idx)
    return sum(terms[k] for k in sorted(terms))
