"""Unweighted average recall, accuracy and the one-tailed two-proportion z-test.

Run: python demos/metrics_demo.py
"""

import numpy as np

from fedser.metrics import confusion_matrix, one_tailed_z_test, uar, accuracy

# Imbalanced classes: accuracy rewards the majority class, UAR does not.
y_true = np.array([0] * 90 + [1] * 10)
y_pred = np.zeros(100, dtype=int)
cm = confusion_matrix(y_true, y_pred, 2)
print(cm)
print(f"always predicting class 0: accuracy {accuracy(cm):.2f}, UAR {uar(cm):.2f}")

# Is defended accuracy significantly higher than undefended accuracy?
n = 400
for undefended, defended in ((120, 130), (120, 160), (120, 250)):
    z, p = one_tailed_z_test(undefended, n, defended, n)
    print(f"{undefended}/{n} vs {defended}/{n}: z = {z:.2f}, p = {p:.2g}")
