"""Tour of the evaluation metrics on small hand-made prediction sets.

Run it directly: python demos/metrics_tour.py
"""

import random

from labelforge import Label, PredictionSet, Taxonomy, compute_metrics
from labelforge.reports import report_to_markdown

# An exclusive three-class taxonomy. Every document has exactly one true
# class; the model predicts one class or nothing at all.
news = Taxonomy(
    name="newsdesk",
    labels=[
        Label(id="health", display_name="Health"),
        Label(id="economy", display_name="Economy"),
        Label(id="defense", display_name="Defense"),
    ],
    exclusive=True,
)

rng = random.Random(7)
ids = news.label_ids
rows = []
for i in range(300):
    truth = rng.choice(ids)
    # 80% correct, 15% confused with a neighbour, 5% unparseable output.
    roll = rng.random()
    if roll < 0.80:
        pred = [truth]
    elif roll < 0.95:
        pred = [rng.choice([c for c in ids if c != truth])]
    else:
        pred = []
    rows.append((f"doc{i}", [truth], pred))

report = compute_metrics(PredictionSet.from_label_sets(news, rows))
print(report_to_markdown(report))
print()

# The same machinery in multi-label mode. Here a document can carry several
# labels; set metrics replace the confusion matrix.
topics = Taxonomy(
    name="topics",
    labels=[Label(id=c, display_name=c.upper()) for c in "abcde"],
    max_labels=3,
)

rows = []
for i in range(300):
    truth = set(rng.sample("abcde", rng.randint(1, 3)))
    pred = set(rng.sample("abcde", rng.randint(0, 3)))
    if rng.random() < 0.6:
        pred = set(truth)  # most predictions are spot on
    rows.append((f"doc{i}", truth, pred))

multi = compute_metrics(PredictionSet.from_label_sets(topics, rows))
print(report_to_markdown(multi))

print("jaccard (standard) :", round(multi.jaccard_standard, 4))
print("jaccard (paper)    :", round(multi.jaccard_paper, 4))
print("at least one right :", round(multi.at_least_one_correct, 4))
