"""Partial domain adaptation with adversarial alignment and selective-voting class weights."""

__version__ = "0.1.0"
