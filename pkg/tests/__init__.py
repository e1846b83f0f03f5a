"""Test package for TFC Test Writer Aider."""
