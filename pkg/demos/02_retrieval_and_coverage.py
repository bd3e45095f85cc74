"""
BM25 retrieval and coverage curves
==================================

Builds a small synthetic world, retrieves for one question, then shows how
answer recall grows as more passages are considered.
"""

from gainrag import coverage_curves
from gainrag.synthetic import build_toy_world

world = build_toy_world(n_train=0, n_eval=40, seed=3)
index, lm = world.index(), world.backend()
print(len(world.corpus), "passages,", len(index.postings), "distinct terms")

sample = world.eval[0]
print("\nquestion:", sample.question, "| gold:", sample.gold_answers[0])
for pid, s in index.retrieve(sample.question, 3).entries:
    print(f"  {s:6.3f}  {pid}  {index.passage(pid).text[:60]}...")

print("\n   k  recall  em_cov  f1_cov")
for row in coverage_curves(world.eval, index, lm, ks=[1, 2, 5, 10]):
    print(f"{row['k']:4d}  {row['recall']:6.3f}  {row['em_coverage']:6.3f}  {row['f1_coverage']:6.3f}")
