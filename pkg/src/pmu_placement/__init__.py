"""Resilient PMU placement toolkit."""
