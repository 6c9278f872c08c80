# src.services package
