__all__ = ["mesh", "readers", "depth"]
