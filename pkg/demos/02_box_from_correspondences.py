"""Recovering a 7-DOF box from point/NLC correspondences.

Each correspondence pairs a LiDAR point with its normalized local coordinate.
Three generic correspondences give 9 equations for 7 unknowns (center, three
dimensions, yaw), so a handful of points pin the box down exactly.  This
script recovers a box from clean and noisy correspondences and inspects the
problem's local degrees of freedom.
"""

import numpy as np

from nlcdet import Box3D, dof_analysis, nlc_to_lidar, solve_box

rng = np.random.default_rng(7)

truth = Box3D(center=np.array([18.0, 4.0, -0.3]), l=4.5, w=1.9, h=1.6, yaw=-0.9)
nlc = rng.uniform(0.05, 0.95, size=(10, 3))
corrs = np.hstack([nlc_to_lidar(nlc, truth), nlc])

report = solve_box(corrs)
print("clean correspondences:")
print(f"  converged in {report.iterations} iterations, "
      f"residual {report.rms_residual:.3e}")
print(f"  center error: {np.abs(report.box.center - truth.center).max():.3e}")
print(f"  dims error:   {max(abs(report.box.l - truth.l), abs(report.box.w - truth.w), abs(report.box.h - truth.h)):.3e}")
print(f"  yaw error:    {abs(report.box.yaw - truth.yaw):.3e}")

# With noisy NLC targets the fit degrades gracefully.
print("\nnoise sweep (NLC target noise, 50 trials each):")
for sigma in (0.005, 0.01, 0.02, 0.05):
    errs = []
    for _ in range(50):
        noisy = corrs.copy()
        noisy[:, 3:] += rng.normal(scale=sigma, size=(len(corrs), 3))
        rep = solve_box(noisy, init=truth)
        errs.append(np.linalg.norm(rep.box.center - truth.center))
    print(f"  sigma={sigma:<6} median center error {np.median(errs):.4f} m")

# Degrees of freedom: one correspondence leaves the problem underdetermined,
# and coplanar NLC targets (all on the z = 0.5 slab) cannot fix the height.
single = dof_analysis(corrs[:1], at=truth)
coplanar_nlc = rng.uniform(0.05, 0.95, size=(8, 3))
coplanar_nlc[:, 2] = 0.5
coplanar = np.hstack([nlc_to_lidar(coplanar_nlc, truth), coplanar_nlc])
print("\ndegrees of freedom (7 unknowns):")
print(f"  1 correspondence:      rank {single['jacobian_rank']} "
      f"({single['equations']} equations)")
print(f"  8 coplanar targets:    rank {dof_analysis(coplanar, at=truth)['jacobian_rank']}")
print(f"  10 generic targets:    rank {dof_analysis(corrs, at=truth)['jacobian_rank']}")
