"""
From human keypoints to robot joints
====================================

Fifteen keypoints (middle, distal and tip of each finger) trace a closing
motion. We fit the 20-DOF demo hand to them frame by frame, inside its
joint limits.
"""

import numpy as np

from dexrefine import load_demo_chain
from dexrefine.fixtures import hand20_keypoint_arc, retarget_spec_doc
from dexrefine.retarget import retarget_sequence, retarget_spec_from_dict

chain = load_demo_chain("hand20")
q_true, keypoints = hand20_keypoint_arc(chain, n_frames=12)
print(f"{chain.name}: {chain.dof} joints; keypoints {keypoints.shape}")

# Fingertips weigh 1.0, the other phalanges 0.5.
spec = retarget_spec_from_dict(retarget_spec_doc(chain), chain.fingertip_links)
print("weights:", spec.keypoint_weights)

traj = retarget_sequence(keypoints, chain, spec, q_init=q_true[0])
err = np.abs(traj.frames - q_true)
print(f"max joint error over the arc: {err.max():.2e} rad")

# A smoothness term trades tracking for staying near the previous frame.
for lam in (0.0, 1e-3, 1e-1):
    smooth = retarget_spec_from_dict(dict(retarget_spec_doc(chain), lambda_smooth=lam), chain.fingertip_links)
    out = retarget_sequence(keypoints, chain, smooth, q_init=q_true[0])
    print(f"lambda_smooth={lam:g}: max joint error {np.abs(out.frames - q_true).max():.4f} rad")
