"""reloop: a closed-loop research orchestration engine.

The engine runs survey -> idea generation/evolution -> assessment ->
methodology construction -> planned experiment execution with
auto-debugging against a pluggable LLM backend, with human-feedback
gates and an HTTP API for a companion UI.
"""

__version__ = "0.1.0"
