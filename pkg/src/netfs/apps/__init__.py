"""Applications that manage the network purely through ``/net`` file operations."""
