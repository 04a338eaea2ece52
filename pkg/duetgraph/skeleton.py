"""
The 29-joint body layout: 24 body-model joints plus head top, middle
fingertips and big toes.
"""

import numpy as np


NUM_JOINTS = 29

JOINT_NAMES = (
    "pelvis", "left_hip", "right_hip", "spine1", "left_knee", "right_knee",
    "spine2", "left_ankle", "right_ankle", "spine3", "left_foot", "right_foot",
    "neck", "left_collar", "right_collar", "head", "left_shoulder", "right_shoulder",
    "left_elbow", "right_elbow", "left_wrist", "right_wrist", "left_hand", "right_hand",
    "head_top", "left_middle", "right_middle", "left_bigtoe", "right_bigtoe",
)

PARENTS = (
    -1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14,
    16, 17, 18, 19, 20, 21, 15, 22, 23, 10, 11,
)

# (child, parent) pairs drawn as bones.
BONES = tuple((child, parent) for child, parent in enumerate(PARENTS) if parent >= 0)

# Standing rest pose in meters, z up, facing +y.
REST_POSE = np.array([
    [0.00, 0.00, 0.95], [0.09, 0.00, 0.87], [-0.09, 0.00, 0.87], [0.00, 0.00, 1.05],
    [0.10, 0.00, 0.50], [-0.10, 0.00, 0.50], [0.00, 0.00, 1.18], [0.10, 0.00, 0.08],
    [-0.10, 0.00, 0.08], [0.00, 0.00, 1.25], [0.11, 0.10, 0.02], [-0.11, 0.10, 0.02],
    [0.00, 0.00, 1.45], [0.07, 0.00, 1.40], [-0.07, 0.00, 1.40], [0.00, 0.00, 1.58],
    [0.18, 0.00, 1.40], [-0.18, 0.00, 1.40], [0.45, 0.00, 1.40], [-0.45, 0.00, 1.40],
    [0.70, 0.00, 1.40], [-0.70, 0.00, 1.40], [0.78, 0.00, 1.40], [-0.78, 0.00, 1.40],
    [0.00, 0.00, 1.72], [0.86, 0.00, 1.40], [-0.86, 0.00, 1.40], [0.11, 0.18, 0.00],
    [-0.11, 0.18, 0.00],
])

LEFT_ARM = (16, 18, 20, 22, 25)
RIGHT_ARM = (17, 19, 21, 23, 26)
LEFT_LEG = (4, 7, 10, 27)
RIGHT_LEG = (5, 8, 11, 28)
