"""Bundled figure recipes (JSON run configs)."""
