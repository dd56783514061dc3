"""Canonicalization of camera-centred 3D skeletons into a body-centred frame.

Modules: ``geom3d`` (rotations), ``skeleton`` (joint layout and pose files),
``geocanon`` (rule-based canonicalizer), ``adcore`` (reverse-mode autodiff),
``model`` / ``losses`` / ``trainer`` (the rotation network), ``metrics``,
``datagen`` (synthetic pairs), ``kinematics`` (signals) and ``cli``.
"""

__version__ = "0.1.0"
