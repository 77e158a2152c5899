"""Noisy tensor completion with the tensor ring nuclear norm."""
