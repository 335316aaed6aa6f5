"""Test suite for mopg."""
