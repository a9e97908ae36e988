"""Test suite for biasfst."""
