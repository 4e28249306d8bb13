"""
The distillation loss, one number at a time
============================================

A student is trained against two targets: the true label through cross
entropy, and the teacher's softened distribution through a KL term. This
script evaluates each piece on tiny inputs so the values can be checked by
hand.
"""

import numpy as np

from autokd.diffengine import KdLossConfig, cross_entropy, kd_loss, kl_div, softmax_t

# Temperature flattens a distribution. At tau = 1 the logits [2, 0] give a
# confident split; at tau = 4 the split is much closer to even.
z = np.array([2.0, 0.0])
for tau in (1.0, 2.0, 4.0):
    print(f"softmax({z}, tau={tau}) = {softmax_t(z, tau).round(4)}")

# Cross entropy of a three-class prediction whose argmax is right.
print("CE([1,2,3], label 2) =", round(float(cross_entropy([1.0, 2.0, 3.0], 2)), 6))

# KL(p || q) is zero only when the distributions agree.
print("KL([.7,.3] || [.4,.6]) =", round(float(kl_div([0.7, 0.3], [0.4, 0.6])), 6))

# The blend. With alpha = 0 the teacher is ignored entirely; with alpha = 1
# only agreement with the teacher matters.
student, teacher, label = np.array([1.0, 0.0]), np.array([0.0, 1.0]), 0
for alpha in (0.0, 0.5, 1.0):
    cfg = KdLossConfig(temperature=1.0, weight=alpha)
    print(f"alpha={alpha}: loss = {float(kd_loss(student, teacher, label, cfg)):.6f}")

# The optional tau^2 factor keeps the KL gradient from shrinking as 1/tau.
for flag in (False, True):
    cfg = KdLossConfig(temperature=4.0, weight=1.0, tau_squared_scaling=flag)
    print(f"tau=4, tau^2 scaling {flag}: loss = {float(kd_loss(student, teacher, label, cfg)):.6f}")
