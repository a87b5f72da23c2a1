"""Tests for the ConRL toolkit."""
