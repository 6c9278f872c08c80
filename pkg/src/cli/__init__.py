# src.cli package
