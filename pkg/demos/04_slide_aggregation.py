# coding: utf-8

# # From patch predictions to a slide label
#
# Predictions below their class threshold are discarded. The surviving counts
# are turned into a label. Benign is dropped, and so is any class holding less
# than 5% of the retained predictions. The largest remaining class is the
# predominant pattern and the others are minors.

from wsi_patterns import ClassCounts, aggregate

print(aggregate(ClassCounts((0, 70, 0, 0, 30, 0))))   # acinar, minor solid
print(aggregate(ClassCounts((0, 96, 0, 0, 4, 0))))    # solid falls under 5%
print(aggregate(ClassCounts((0, 95, 0, 0, 5, 0))))    # exactly 5% is kept
print(aggregate(ClassCounts((0, 0, 0, 0, 0, 100))))   # nothing cancerous: indeterminate
print(aggregate(ClassCounts((30, 30, 0, 0, 0, 40))))  # tie goes to the lower class index

# Thresholds act before counting. A confident acinar patch survives a 0.5
# threshold and a shaky solid one does not.

from wsi_patterns import PatchGeometry, PatchPrediction, ProbabilityVector, ThresholdVector, filter_predictions

def pred(top, conf, x):
    rest = (1 - conf) / 5
    return PatchPrediction(PatchGeometry(x, 0, 224), ProbabilityVector(tuple(conf if k == top else rest for k in range(6))))

preds = [pred(1, 0.9, i) for i in range(20)] + [pred(4, 0.28, 100 + i) for i in range(5)]
for tau in (ThresholdVector(), ThresholdVector.uniform(0.5)):
    retained, counts = filter_predictions(preds, tau)
    print(tau.tau[0], counts.counts, aggregate(counts))

# The probability-averaging baseline averages the vectors over all patches and
# reads the label from the means.

from wsi_patterns import baseline_aggregate

print("baseline:", baseline_aggregate(preds, ThresholdVector.uniform(0.15)))
