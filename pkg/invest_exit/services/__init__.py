"""Services module for the exit problem, threshold solver, statics and simulation."""
