"""
Services package: the engine's computation.

Kept import-light; modules import each other directly, e.g.:
    from services.cost_model import frame_cost
"""

__all__: list[str] = []
