"""Multi-domain multi-task rehearsal for task-incremental lifelong learning."""

__version__ = "0.1.0"
