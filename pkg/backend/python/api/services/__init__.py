"""
Adversarial Go Lab - Services Package
"""
