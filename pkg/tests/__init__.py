"""Tests for the duetgraph package."""
