"""HTTP service wrapping the navigation pipeline and live sessions."""

from .app import create_app
from .sessions import LiveSession, SessionManager

__all__ = ["create_app", "LiveSession", "SessionManager"]
