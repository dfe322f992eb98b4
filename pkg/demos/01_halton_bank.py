"""
A fixed perturbation bank from the Halton sequence
==================================================

Every controller in the package draws its perturbations from one bank that
is built once: Halton points, mapped to standard normals and smoothed along
the horizon with a cubic B-spline. Sample ``i`` means the same thing at
every control step, which is what lets a network read "the cost of sample 0"
as a feature.
"""

import numpy as np

from l2o_mpc.sampling import (
    HaltonConfig,
    build_sample_bank,
    first_primes,
    halton_points,
    radical_inverse,
)

# radical inverse: reverse the digits of the index across the radix point
for base in (2, 3):
    print(base, [radical_inverse(i, base) for i in range(1, 7)])

# a 2-D Halton set fills the unit square far more evenly than uniform draws
pts = halton_points(HaltonConfig(dimension=2, count=256))
counts, _, _ = np.histogram2d(pts[:, 0], pts[:, 1], bins=4, range=[[0, 1], [0, 1]])
print("halton cell counts\n", counts)
rng = np.random.default_rng(0)
counts, _, _ = np.histogram2d(*rng.random((2, 256)), bins=4, range=[[0, 1], [0, 1]])
print("uniform cell counts\n", counts)

# a horizon-30 bank uses the first 30 primes as bases; bases above the sample
# count only see the low end of (0, 1) at the start of the sequence, so skip ahead
print("largest base:", first_primes(30)[-1])
for skip in (0, 511):
    bank = build_sample_bank(64, 30, 1, skip=skip)
    z = bank.perturbations[..., 0]
    print(f"skip={skip:3d}  mean {z.mean():+.3f}  std {z.std():.3f}  "
          f"corr(row0,row1) {np.corrcoef(z[0], z[1])[0, 1]:+.2f}")

# prefixes are exact: the learner's two samples are the expert's first two
big = build_sample_bank(64, 30, 1, skip=511)
small = build_sample_bank(2, 30, 1, skip=511)
print("prefix identical:", np.array_equal(big.prefix(2).perturbations, small.perturbations))
