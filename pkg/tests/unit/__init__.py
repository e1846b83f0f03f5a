"""Unit test package for TFC Test Writer Aider."""
