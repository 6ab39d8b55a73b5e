"""Training runs, tuners, persistence and the command line."""
