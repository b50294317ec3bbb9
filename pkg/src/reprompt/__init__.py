"""Feedback-driven optimizer for the step-instruction section of agent prompts."""

__version__ = "0.1.0"
