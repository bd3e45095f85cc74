"""
End-to-end on a toy world
=========================

In half of the evaluation questions the top-ranked passage mentions the
entity but not the answer. Training data comes from gain synthesis on the
train split; at inference the selector picks one passage per question.
"""

from gainrag import TrainConfig, answer_all, assemble_groups, evaluate, filter_groups, synthesize, train
from gainrag.selector import FeatureConfig
from gainrag.synthetic import build_toy_world

world = build_toy_world(n_train=20, n_eval=30, misleading_fraction=0.5, seed=0)
index, lm = world.index(), world.backend()

res = synthesize(world.train, index, lm, k=5)
groups = assemble_groups(res.records, {s.id: s.question for s in world.train}, res.passage_lookup(index))
groups, report = filter_groups(groups, lm, {s.id: s.gold_answers for s in world.train})
print(f"{len(res.records)} gain records, {report['kept']} groups kept, {report['dropped']} dropped")

model = train([g for g in groups if g.size >= 2], TrainConfig(), FeatureConfig(idf=dict(index.idf)))

for mode in ("no-retrieval", "standard-rag", "pseudo-only", "gainrag"):
    r = evaluate(world.eval, answer_all(world.eval, lm, index, model, k=5, mode=mode), mode=mode)
    print(f"{mode:13s} EM {r.em:5.1f}  F1 {r.f1:5.1f}  Avg {r.avg:5.1f}")
