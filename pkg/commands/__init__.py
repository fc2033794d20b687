"""Command line interface for the monoloc library."""
