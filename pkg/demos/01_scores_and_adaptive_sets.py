"""
Scores and adaptive prediction sets
===================================

CRC thresholds raw pixel probabilities. CRA instead scores a pixel by the
share of the image's probability mass held by pixels at or below it, so a
single threshold adapts to how much mass each image carries.
"""

import numpy as np

from segrc import adaptive_set, cra_score, crc_score, threshold_set

p = np.array([[0.5, 0.3, 0.2]])
print("probabilities   ", p)
print("CRC scores      ", crc_score(p))
print("CRA scores      ", cra_score(p))

# keep the highest-probability pixels until at least 1 - 0.4 of the mass is in
print("adaptive set 0.4", adaptive_set(p, 0.4))

# the adaptive set is the strict superlevel set of the CRA score
s = cra_score(p)
for a in (0.0, 0.2, 0.4, 0.5, 0.9):
    same = np.array_equal(adaptive_set(p, a), s > a)
    print(f"alpha'={a:.1f}  adaptive={adaptive_set(p, a).astype(int)}  "
          f"cra > alpha'={(s > a).astype(int)}  equal={same}")

# thresholding the CRA score at 1 - alpha' is a different set
print("threshold_set(cra, 0.6)", threshold_set(s, 0.6))

# ties move together: equal probabilities get equal scores
t = np.array([[0.4, 0.4, 0.1, 0.1]])
print("tied map", t, "->", cra_score(t))
