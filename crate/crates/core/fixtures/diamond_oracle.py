"""Step-by-step propagation of the diamond graph, executed literally.

Every queued entry is kept (no pruning), entries pop in (priority, push
order), an entity expands only while its pop count is within p_max, and
each emitted quantity is the head's total divided by the number of
contributions it has received, times exp(-sigma * d).

    python3 diamond_oracle.py > diamond_trace.tsv
"""
import heapq
import json
import math
import os

SIGMA, P_MAX, EPS, S0 = 0.1, 3, 1e-6, 1.0

here = os.path.dirname(os.path.abspath(__file__))
doc = json.load(open(os.path.join(here, "diamond.kg.json")))
rel = {r["name"]: r for r in doc["relations"]}
edges = {e["id"]: [] for e in doc["entities"]}
for h, r, t in doc["triples"]:
    edges[h].append((rel[r]["d"], t, r))
for h in edges:
    edges[h].sort()

s = {e: 0.0 for e in edges}
n_recv = {e: 0 for e in edges}
n_pop = {e: 0 for e in edges}
s["A"], n_recv["A"] = S0, 1

heap, pushes, seq = [(0, 0, "A")], 1, 0
print("seq\tpriority\thead\trelation\ttail\tdelta_s\ts_tail")
while heap:
    prio, _, head = heapq.heappop(heap)
    n_pop[head] += 1
    print(f"{seq}\t{prio}\t{head}\t-\t-\t-\t{s[head]!r}")
    seq += 1
    if n_pop[head] > P_MAX:
        continue
    for d, tail, r in edges[head]:
        delta = s[head] / n_recv[head] * math.exp(-SIGMA * d)
        if delta < EPS * S0:
            continue
        s[tail] += delta
        n_recv[tail] += 1
        print(f"{seq}\t{prio}\t{head}\t{r}\t{tail}\t{delta!r}\t{s[tail]!r}")
        seq += 1
        heapq.heappush(heap, (prio + rel[r]["o"], pushes, tail))
        pushes += 1
