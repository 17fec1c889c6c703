"""
Adversarial Go Lab - API Package
"""
