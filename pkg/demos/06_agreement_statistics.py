# coding: utf-8

# # Agreement between annotators and a model
#
# Four sets of slide labels are compared: three readers and the model. Each pair
# gets Cohen's kappa on predominant patterns with a 95% interval, the share of
# slides with the same predominant pattern, and kappa per pattern on presence
# anywhere on the slide.

from wsi_patterns import HistologicPattern as H
from wsi_patterns import LabeledSeries, SlideLabel, agreement_report, cohen_kappa, welch_t_test

k = cohen_kappa(["a"] * 5 + ["l"] * 5, ["a"] * 4 + ["l", "a"] + ["l"] * 4)
print(f"po={k.po:.2f} pe={k.pe:.2f} kappa={k.kappa:.2f}")

def series(name, preds):
    return LabeledSeries(name, [SlideLabel(p) for p in preds])

readers = {
    "p1": [H.ACINAR, H.ACINAR, H.LEPIDIC, H.SOLID, H.PAPILLARY, H.ACINAR],
    "p2": [H.ACINAR, H.ACINAR, H.SOLID, H.SOLID, H.PAPILLARY, H.LEPIDIC],
    "p3": [H.ACINAR, H.SOLID, H.SOLID, H.SOLID, H.PAPILLARY, H.SOLID],
    "model": [H.ACINAR, H.ACINAR, H.SOLID, H.LEPIDIC, H.PAPILLARY, H.LEPIDIC],
}
report = agreement_report([series(n, p) for n, p in readers.items()])
print(report.table_text())

# Robust agreement asks whether an annotator's predominant call matches at least
# two of the other three. Welch tests compare the per-slide agreement of any two
# pairs.

t = report.tests[0]
print(t.first, "vs", t.second, "p =", None if t.p is None else round(t.p, 3))
print(welch_t_test([1, 2, 3, 4, 5], [2, 3, 4, 5, 6]))
