"""Energy-based voxel confidence: E(f) = -logsumexp(f) over class logits.

The identity log(max softmax) = E(f) + max(f) ties the energy score to the
familiar max-probability confidence while keeping the unnormalized scale
that makes energy a better out-of-distribution signal.

Run:  python3 demos/06_uncertainty_energy.py
"""

import numpy as np

from gliomaseg.uncertainty import confidence_map, energy, softmax_energy_identity_check

rng = np.random.default_rng(4)

# -- confident vs ambiguous voxels ------------------------------------------
confident = np.array([9.0, 0.5, -1.0, -2.0])
ambiguous = np.array([1.1, 1.0, 0.9, 1.0])
print(f"confident logits {confident} -> energy {energy(confident[None])[0]:+.3f}")
print(f"ambiguous logits {ambiguous} -> energy {energy(ambiguous[None])[0]:+.3f}")
print("(lower energy = higher confidence; confidence_map negates it)")

# -- the softmax identity over many random voxels ---------------------------
logits = rng.normal(scale=4.0, size=(10_000, 4))
dev = softmax_energy_identity_check(logits)
print(f"\nmax |log(max softmax) - (E + max logit)| over 10^4 voxels: {dev:.2e}")

# -- shift covariance: energy moves opposite to a constant logit shift ------
shifted = energy(logits + 2.5)
print(f"shift covariance max error: {np.max(np.abs(shifted - (energy(logits) - 2.5))):.2e}")

# -- a toy confidence map ----------------------------------------------------
field = rng.normal(size=(8, 8, 1, 4))
field[2:6, 2:6, 0, 0] += 6.0   # a confidently-background patch
conf = confidence_map(field)[:, :, 0]
print("\nconfidence map (higher = more certain):")
for row in conf:
    print("  " + " ".join(f"{v:5.1f}" for v in row))
