"""Siamese state-action Q-network agents for choice-based text games."""
