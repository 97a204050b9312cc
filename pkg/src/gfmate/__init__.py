"""gfmate: multi-domain graph pre-training plus test-time prompt tuning.

The library layers are importable directly (graph, linalg, pretrain, prompt,
synthetic, harness, plots); the HTTP service lives in gfmate.service and the
CLI in gfmate.cli.
"""

__version__ = "0.1.0"

