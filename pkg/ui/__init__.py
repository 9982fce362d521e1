"""UI package for Verifica: command implementations and terminal reports."""
