"""Battery fast-charging laboratory."""
