"""Independent reference evaluator and random instance generator.

With exact box matching, greedy one-to-one matching of the top-k triples
reduces to a multiset intersection, so the reference counts keys instead
of walking the ranking.
"""

from __future__ import annotations

from collections import Counter
from typing import Dict, List, Tuple

import numpy as np

from mosa.metrics import GroundTruthGraph, GTTriple, PairPrediction
from mosa.scene_model import BoundingBox

BOX_POOL = [BoundingBox(x, y, x + w, y + h) for x, y, w, h in [(0, 0, 2, 2), (1, 1, 3, 2), (5, 0, 2, 4), (2, 6, 1, 1)]]


def _key(sc, sb, r, oc, ob):
    return (sc, tuple(sb.to_list()), r, oc, tuple(ob.to_list()))


def reference_candidates(pairs: List[PairPrediction], mode: str, task: str):
    rows = []
    for p in pairs:
        s = p.predicate_scores if task == "predcls" else p.predicate_scores * p.subject_score * p.object_score
        if mode == "with":
            best = max(range(len(s)), key=lambda r: (s[r], -r))
            chosen = [best]
        else:
            chosen = list(range(len(s)))
        for r in chosen:
            rows.append((float(s[r]), r, p.pair_id, _key(p.subject_category, p.subject_box, r, p.object_category, p.object_box)))
    if not rows:
        return []
    order = np.lexsort((np.array([r[2] for r in rows]), np.array([r[1] for r in rows]), -np.array([r[0] for r in rows])))
    return [rows[i][3] for i in order]


def reference_metrics(predictions, gt: GroundTruthGraph, k: int, mode: str, task: str = "predcls") -> Tuple[float, float]:
    recalls: List[float] = []
    per_class: Dict[int, List[float]] = {}
    for key, gts in gt.frames.items():
        if not gts:
            continue
        top = Counter(reference_candidates(predictions.get(key, []), mode, task)[:k])
        want = Counter(_key(g.subject_category, g.subject_box, g.predicate, g.object_category, g.object_box) for g in gts)
        hit = top & want
        recalls.append(sum(hit.values()) / len(gts))
        for c in {g.predicate for g in gts}:
            n = sum(v for kk, v in want.items() if kk[2] == c)
            m = sum(v for kk, v in hit.items() if kk[2] == c)
            per_class.setdefault(c, []).append(m / n)
    r = sum(recalls) / len(recalls) if recalls else 0.0
    means = [sum(v) / len(v) for v in per_class.values()]
    return r, (sum(means) / len(means) if means else 0.0)


def random_instance(rng: np.random.Generator, task: str = "predcls"):
    """At most 5 pairs and 6 predicates per frame, with coarse scores so ties occur."""
    nr = int(rng.integers(1, 7))
    predictions, gt = {}, GroundTruthGraph()
    for f in range(int(rng.integers(1, 4))):
        key = ("v", f)
        pairs = []
        for pid in range(int(rng.integers(0, 6))):
            sc, oc = 0, int(rng.integers(1, 3))
            sb, ob = BOX_POOL[int(rng.integers(0, 2))], BOX_POOL[int(rng.integers(2, 4))]
            scores = rng.integers(0, 5, size=nr) / 4.0
            pairs.append(PairPrediction(pid, sc, sb, oc, ob, scores, float(rng.integers(1, 5)) / 4, float(rng.integers(1, 5)) / 4))
        predictions[key] = pairs
        for _ in range(int(rng.integers(0, 5))):
            gt.add(key, GTTriple(0, BOX_POOL[int(rng.integers(0, 2))], int(rng.integers(0, nr)),
                                 int(rng.integers(1, 3)), BOX_POOL[int(rng.integers(2, 4))]))
    return predictions, gt
