"""Dataset handling, fold planning, experiment orchestration and the CLI."""
