# src.utils package
