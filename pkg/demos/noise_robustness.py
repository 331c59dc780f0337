"""
Why an asymmetric contact kernel
================================

Jitter the sphere cloud with Gaussian noise and refine the same grasp
again. The asymmetric kernel should move the fingertips less than a
symmetric smoothed |d| would.
"""

from dexrefine import load_demo_chain
from dexrefine.energy import PriorWeights
from dexrefine.fixtures import sphere_cloud, sphere_grasp_sequence
from dexrefine.refiner import RefinementConfig, noise_study

chain = load_demo_chain("gripper3")
q_gen, poses = sphere_grasp_sequence(1, chain)
cfg = RefinementConfig(priors=PriorWeights(0.01, 0.005, 0.0025))

rows, summary = noise_study(sphere_cloud(4000), [0.0, 0.001, 0.002, 0.004], 20, chain, cfg, q_gen[0], poses[0], rng=0)

print("sigma (mm)   asymmetric (mm)   smooth |d| (mm)")
for s in summary:
    print(f"{1000 * s['sigma']:9.1f}   {1000 * s['median_deviation_asymmetric']:15.4f}   {1000 * s['median_deviation_smooth_abs']:15.4f}")
