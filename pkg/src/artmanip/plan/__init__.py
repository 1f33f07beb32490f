"""Arm kinematics, collision checking, sampling-based planning, simulation."""
